import math

import numpy as np
import pytest

from scanfuse.distill import (
    DistillConfig,
    affinity_matrix,
    feature_distill_loss,
    finite_difference_gradient,
    gradient_scale_error,
    iaad_loss,
    soft_logits_kl_loss,
    total_loss,
    verify_gradients,
)
from scanfuse.errors import (
    DegenerateInstance,
    InvalidConfig,
    NumericError,
    ShapeError,
)

# Frozen from the independent hand computation
# ((2/3)ln(4/3) + (1/3)ln(2/3)) / 2 at 20 significant digits.
KL_TWO_CLASS_EXPECTED = 0.028316506132566245483


# --- feature distillation -------------------------------------------------------


def test_feature_loss_zero_at_equality():
    rng = np.random.default_rng(0)
    t = rng.normal(size=(8, 5))
    loss, grad = feature_distill_loss(t, t.copy(), 1.0)
    assert loss == 0.0
    assert np.array_equal(grad, np.zeros_like(t))


def test_feature_loss_quadratic_branch():
    loss, _ = feature_distill_loss(np.array([[0.5]]), np.array([[0.0]]), 1.0)
    assert loss == 0.125


def test_feature_loss_linear_branch_and_gradient():
    teacher = np.array([[2.0]])
    student = np.array([[0.0]])
    loss, grad = feature_distill_loss(teacher, student, 1.0)
    assert loss == 1.5
    fd = finite_difference_gradient(
        lambda x: feature_distill_loss(teacher, x, 1.0)[0], student.copy()
    )
    assert gradient_scale_error(grad, fd) < 1e-6


def test_feature_loss_branch_continuity():
    threshold = 0.7
    quadratic = threshold**2 / (2 * threshold)
    linear = threshold - threshold / 2
    assert abs(quadratic - linear) < 1e-12
    # and numerically just around the boundary
    below, _ = feature_distill_loss(
        np.array([[threshold - 1e-9]]), np.array([[0.0]]), threshold
    )
    above, _ = feature_distill_loss(
        np.array([[threshold + 1e-9]]), np.array([[0.0]]), threshold
    )
    assert abs(above - below) < 1e-8


def test_feature_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        feature_distill_loss(np.zeros((2, 3)), np.zeros((3, 2)), 1.0)


def test_feature_loss_rejects_non_finite():
    bad = np.array([[np.nan]])
    with pytest.raises(NumericError):
        feature_distill_loss(bad, np.zeros((1, 1)), 1.0)


# --- soft logits KL -------------------------------------------------------


def test_kl_zero_at_equality():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(6, 4))
    loss, grad = soft_logits_kl_loss(z, z.copy(), 2.0)
    assert loss == 0.0
    assert np.abs(grad).max() == 0.0


def test_kl_two_class_hand_value():
    loss, _ = soft_logits_kl_loss(
        np.array([[math.log(2.0), 0.0]]), np.array([[0.0, 0.0]]), 1.0
    )
    expected = ((2 / 3) * math.log(4 / 3) + (1 / 3) * math.log(2 / 3)) / 2
    assert abs(loss - expected) < 1e-10
    assert abs(loss - KL_TWO_CLASS_EXPECTED) < 1e-10


def test_kl_nonnegative_on_random_pairs():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n, c = int(rng.integers(1, 6)), int(rng.integers(2, 6))
        t = rng.normal(scale=3.0, size=(n, c))
        s = rng.normal(scale=3.0, size=(n, c))
        loss, _ = soft_logits_kl_loss(t, s, float(rng.uniform(0.25, 4.0)))
        assert loss >= 0.0


def test_kl_shape_mismatch():
    with pytest.raises(ShapeError):
        soft_logits_kl_loss(np.zeros((2, 3)), np.zeros((2, 4)), 1.0)


def test_kl_temperature_softens():
    t = np.array([[4.0, 0.0]])
    s = np.array([[0.0, 4.0]])
    hot, _ = soft_logits_kl_loss(t, s, 8.0)
    cold, _ = soft_logits_kl_loss(t, s, 1.0)
    assert hot < cold


# --- affinity matrices -------------------------------------------------------


def test_affinity_identical_rows_give_ones():
    rows = np.tile(np.array([1.0, 2.0, 3.0]), (4, 1))
    a = affinity_matrix(rows, np.arange(4))
    assert np.abs(a.values - 1.0).max() < 1e-12


def test_affinity_orthogonal_rows():
    rows = np.array([[1.0, 0.0], [0.0, 2.0]])
    a = affinity_matrix(rows, np.arange(2))
    assert abs(a.values[0, 1]) < 1e-12
    assert np.abs(np.diag(a.values) - 1.0).max() < 1e-12


def test_affinity_matches_brute_force():
    rng = np.random.default_rng(3)
    rows = rng.normal(size=(10, 6))
    a = affinity_matrix(rows, np.arange(10))
    for i in range(10):
        for j in range(10):
            expected = rows[i] @ rows[j] / (
                np.linalg.norm(rows[i]) * np.linalg.norm(rows[j])
            )
            assert abs(a.values[i, j] - expected) < 1e-12


def test_affinity_invariants_on_random_sets():
    rng = np.random.default_rng(4)
    for _ in range(200):
        rows = rng.normal(size=(int(rng.integers(2, 12)), int(rng.integers(1, 8))))
        a = affinity_matrix(rows, np.arange(len(rows))).values
        assert np.abs(a - a.T).max() < 1e-9
        assert np.abs(np.diag(a) - 1.0).max() < 1e-9
        assert a.min() >= -1.0 and a.max() <= 1.0


def test_affinity_squared_norm_variant():
    rng = np.random.default_rng(5)
    rows = rng.normal(size=(5, 4))
    a = affinity_matrix(rows, np.arange(5), squared_norms=True)
    norms = np.linalg.norm(rows, axis=1)
    for i in range(5):
        for j in range(5):
            expected = rows[i] @ rows[j] / (norms[i] ** 2 * norms[j] ** 2)
            assert abs(a.values[i, j] - expected) < 1e-12
    # the literal printed form loses the unit diagonal
    assert np.abs(np.diag(a.values) - 1.0).max() > 1e-6


def test_affinity_zero_norm_row():
    rows = np.array([[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(NumericError):
        affinity_matrix(rows, np.arange(2))


def test_affinity_degenerate_instance():
    with pytest.raises(DegenerateInstance):
        affinity_matrix(np.ones((3, 2)), np.array([1]))


# --- instance-aware affinity distillation -----------------------------------


def test_iaad_zero_at_equality():
    rng = np.random.default_rng(6)
    feats = rng.normal(size=(9, 4))
    instances = [np.array([0, 1, 2]), np.array([4, 5, 6, 7])]
    loss, grad = iaad_loss(feats, feats.copy(), instances)
    assert loss == 0.0
    assert np.abs(grad).max() == 0.0


def test_iaad_two_point_example():
    teacher = np.array([[1.0, 0.0], [1.0, 0.0]])
    student = np.array([[1.0, 0.0], [0.0, 1.0]])
    loss, _ = iaad_loss(teacher, student, [np.arange(2)])
    assert loss == 0.5


def test_iaad_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    teacher = rng.normal(size=(7, 4)) + 0.3
    student = rng.normal(size=(7, 4)) + 0.3
    instances = [np.array([0, 1, 2]), np.array([3, 4, 5, 6])]
    _, grad = iaad_loss(teacher, student, instances)
    fd = finite_difference_gradient(
        lambda x: iaad_loss(teacher, x, instances)[0], student.copy()
    )
    assert gradient_scale_error(grad, fd) < 1e-5


def test_iaad_skips_tiny_instances():
    rng = np.random.default_rng(8)
    feats = rng.normal(size=(4, 3))
    other = rng.normal(size=(4, 3))
    loss, grad = iaad_loss(feats, other, [np.array([2])])
    assert loss == 0.0
    assert np.abs(grad).max() == 0.0


# --- combined objective -------------------------------------------------------


def test_total_loss_default_weights():
    assert abs(total_loss(1, 1, 1, 1, 1, (0.5, 0.01, 0.1, 0.1)) - 1.71) < 1e-12


def test_total_loss_zero_betas():
    assert total_loss(3.5, 9.0, 9.0, 9.0, 9.0, (0.0, 0.0, 0.0, 0.0)) == 3.5


def test_total_loss_matches_weighted_sum_oracle():
    rng = np.random.default_rng(9)
    for _ in range(100):
        vals = rng.normal(size=5)
        betas = tuple(rng.normal(size=4))
        expected = vals[0] + sum(b * v for b, v in zip(betas, vals[1:]))
        assert abs(total_loss(*vals, betas) - expected) < 1e-12


def test_total_loss_rejects_non_finite():
    with pytest.raises(NumericError):
        total_loss(float("nan"), 0, 0, 0, 0, (0.5, 0.01, 0.1, 0.1))


def test_distill_config_defaults_and_validation():
    config = DistillConfig()
    assert config.betas == (0.5, 0.01, 0.1, 0.1)
    with pytest.raises(InvalidConfig):
        DistillConfig(smooth_l1_T=0.0)
    with pytest.raises(InvalidConfig):
        DistillConfig(temperature_P=-1.0)


# --- shared properties -------------------------------------------------------


def test_losses_zero_iff_equal_and_nonnegative():
    rng = np.random.default_rng(10)
    for _ in range(50):
        n, w = int(rng.integers(2, 8)), int(rng.integers(2, 6))
        t = rng.normal(size=(n, w))
        s = rng.normal(size=(n, w))
        assert feature_distill_loss(t, t.copy())[0] == 0.0
        assert soft_logits_kl_loss(t, t.copy())[0] == 0.0
        assert iaad_loss(t, t.copy(), [np.arange(n)])[0] == 0.0
        assert feature_distill_loss(t, s)[0] >= 0.0
        assert soft_logits_kl_loss(t, s)[0] >= 0.0
        assert iaad_loss(t, s, [np.arange(n)])[0] >= 0.0


def test_losses_invariant_under_row_permutation():
    rng = np.random.default_rng(11)
    for _ in range(20):
        n, w = int(rng.integers(3, 9)), int(rng.integers(2, 5))
        t = rng.normal(size=(n, w))
        s = rng.normal(size=(n, w))
        perm = rng.permutation(n)
        instances = [np.arange(n)]
        perm_instances = [np.argsort(perm)[np.arange(n)]]  # same set, remapped

        fd0 = feature_distill_loss(t, s)[0]
        fd1 = feature_distill_loss(t[perm], s[perm])[0]
        assert fd0 == fd1

        kl0 = soft_logits_kl_loss(t, s)[0]
        kl1 = soft_logits_kl_loss(t[perm], s[perm])[0]
        assert kl0 == kl1

        ia0 = iaad_loss(t, s, instances)[0]
        inverse = np.empty(n, dtype=np.int64)
        inverse[perm] = np.arange(n)
        ia1 = iaad_loss(t[perm], s[perm], [inverse[np.arange(n)]])[0]
        assert ia0 == ia1


def test_gradient_verification_suite():
    rows = verify_gradients(cases=30, seed=1)
    assert {name for name, _, _ in rows} == {"feature", "logits", "affinity"}
    for name, err, passed in rows:
        assert passed, f"{name} gradient error {err}"
