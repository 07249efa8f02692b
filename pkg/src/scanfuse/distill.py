"""Teacher-to-student distillation losses with analytic gradients.

Three losses: smooth-L1 feature matching, temperature-softened KL on logits,
and instance-aware affinity matching on per-instance cosine-similarity
matrices. Each returns (loss, gradient wrt the student input); the teacher
side is treated as constant. Loss scalars are reduced with exact summation
(math.fsum) so identical row permutations of both inputs leave the value
bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateInstance,
    InvalidConfig,
    NumericError,
    ShapeError,
)


@dataclass(eq=False)
class FeatureMap:
    """Per-point feature rows plus the cloud indices they correspond to."""

    features: np.ndarray  # (N, f_c)
    point_indices: np.ndarray  # (N,)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {self.features.shape}")
        self.point_indices = np.asarray(self.point_indices, dtype=np.int64).reshape(-1)
        if len(self.point_indices) != len(self.features):
            raise ShapeError(
                f"{len(self.features)} feature rows vs "
                f"{len(self.point_indices)} point indices"
            )

    def __len__(self) -> int:
        return len(self.features)


@dataclass(eq=False)
class LogitMap:
    """Per-point pre-softmax logits."""

    logits: np.ndarray  # (N, C)

    def __post_init__(self) -> None:
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise ShapeError(f"logits must be 2-D, got shape {self.logits.shape}")

    def __len__(self) -> int:
        return len(self.logits)


@dataclass
class DistillConfig:
    smooth_l1_T: float = 1.0
    temperature_P: float = 1.0
    betas: tuple[float, float, float, float] = (0.5, 0.01, 0.1, 0.1)

    def __post_init__(self) -> None:
        if self.smooth_l1_T <= 0.0:
            raise InvalidConfig("smooth_l1_T must be > 0")
        if self.temperature_P <= 0.0:
            raise InvalidConfig("temperature_P must be > 0")
        if len(self.betas) != 4 or not all(math.isfinite(b) for b in self.betas):
            raise InvalidConfig("betas must be four finite values")


@dataclass(eq=False)
class AffinityMatrix:
    """Symmetric per-instance cosine-similarity matrix with unit diagonal."""

    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        n, m = self.values.shape
        if n != m:
            raise ShapeError(f"affinity matrix must be square, got {self.values.shape}")


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, FeatureMap):
        return x.features
    if isinstance(x, LogitMap):
        return x.logits
    return np.asarray(x, dtype=np.float64)


def _check_pair(teacher: np.ndarray, student: np.ndarray) -> None:
    if teacher.shape != student.shape:
        raise ShapeError(
            f"teacher shape {teacher.shape} != student shape {student.shape}"
        )
    if not np.isfinite(teacher).all() or not np.isfinite(student).all():
        raise NumericError("non-finite values in loss inputs")


def feature_distill_loss(
    teacher, student, threshold: float = 1.0
) -> tuple[float, np.ndarray]:
    """Smooth-L1 feature matching, averaged over all N*f_c elements.

    Per element d = teacher - student: d^2/(2T) inside the threshold,
    |d| - T/2 outside (the continuous completion). The gradient is taken
    with respect to the student features.
    """
    if threshold <= 0.0:
        raise InvalidConfig("threshold must be > 0")
    f_teacher = _as_matrix(teacher)
    f_student = _as_matrix(student)
    _check_pair(f_teacher, f_student)
    if f_teacher.size == 0:
        return 0.0, np.zeros_like(f_student)

    diff = f_teacher - f_student
    inside = np.abs(diff) < threshold
    contrib = np.where(
        inside, diff * diff / (2.0 * threshold), np.abs(diff) - threshold / 2.0
    )
    count = f_teacher.size
    loss = math.fsum(contrib.ravel()) / count
    grad = np.where(inside, -diff / threshold, -np.sign(diff)) / count
    return loss, grad


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(z))


def soft_logits_kl_loss(
    teacher, student, temperature: float = 1.0
) -> tuple[float, np.ndarray]:
    """KL(p || q) between temperature-softened class distributions.

    p = softmax(teacher / P), q = softmax(student / P); the sum of
    p * log(p / q) is averaged over all N*C cells. Gradient is analytic
    through the student softmax: (q - p) / (P * N * C).
    """
    if temperature <= 0.0:
        raise InvalidConfig("temperature must be > 0")
    z_teacher = _as_matrix(teacher)
    z_student = _as_matrix(student)
    _check_pair(z_teacher, z_student)
    if z_teacher.size == 0:
        return 0.0, np.zeros_like(z_student)

    log_p = _log_softmax(z_teacher / temperature)
    log_q = _log_softmax(z_student / temperature)
    p = np.exp(log_p)
    count = z_teacher.size
    loss = math.fsum((p * (log_p - log_q)).ravel()) / count
    grad = (np.exp(log_q) - p) / (temperature * count)
    return loss, grad


def _normalized_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        raise NumericError("zero-norm feature row in instance set")
    return rows / norms[:, None], norms


def affinity_matrix(
    features, instance_points, squared_norms: bool = False
) -> AffinityMatrix:
    """Pairwise similarity of one instance's feature rows.

    Cosine similarity by default; ``squared_norms`` switches to the
    squared-norm denominator variant for comparison studies (which gives up
    the unit diagonal).
    """
    rows = _as_matrix(features)
    idx = np.asarray(instance_points, dtype=np.int64).reshape(-1)
    if len(idx) < 2:
        raise DegenerateInstance(f"instance needs >= 2 points, got {len(idx)}")
    if len(idx) and (idx.min() < 0 or idx.max() >= len(rows)):
        raise IndexError("instance point index out of range")
    sel = rows[idx]
    if not np.isfinite(sel).all():
        raise NumericError("non-finite feature rows")
    if squared_norms:
        norms = np.linalg.norm(sel, axis=1)
        if np.any(norms == 0.0):
            raise NumericError("zero-norm feature row in instance set")
        values = (sel @ sel.T) / (norms[:, None] ** 2 * norms[None, :] ** 2)
    else:
        unit, _ = _normalized_rows(sel)
        values = unit @ unit.T
        values = np.clip(values, -1.0, 1.0)
    values = (values + values.T) / 2.0
    return AffinityMatrix(values)


def _cosine_affinity_raw(sel: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Unclipped cosine affinity plus the pieces the gradient needs."""
    unit, norms = _normalized_rows(sel)
    return unit @ unit.T, unit, norms


def iaad_loss(
    teacher, student, instances: list[np.ndarray]
) -> tuple[float, np.ndarray]:
    """Instance-aware affinity distillation.

    Sum over instances of the mean squared difference between teacher and
    student cosine-affinity matrices (1/|S_k|^2 normalization). Instances
    with fewer than two points contribute nothing. Gradient is analytic
    through the row normalization, with respect to the student features.
    """
    f_teacher = _as_matrix(teacher)
    f_student = _as_matrix(student)
    _check_pair(f_teacher, f_student)

    grad = np.zeros_like(f_student)
    terms: list[float] = []
    for instance in instances:
        idx = np.asarray(instance, dtype=np.int64).reshape(-1)
        if len(idx) < 2:
            continue
        if idx.min() < 0 or idx.max() >= len(f_student):
            raise IndexError("instance point index out of range")
        a_teacher, _, _ = _cosine_affinity_raw(f_teacher[idx])
        a_student, unit, norms = _cosine_affinity_raw(f_student[idx])
        diff = a_student - a_teacher
        n = len(idx)
        terms.append(math.fsum((diff * diff).ravel()) / (n * n))
        # d(loss)/d(A_s) = 2 D / n^2; A_s = U U^T with symmetric D gives
        # d(loss)/d(U) = 4 D U / n^2, then back through the normalization.
        g_unit = (4.0 / (n * n)) * diff @ unit
        g_rows = (g_unit - (np.sum(g_unit * unit, axis=1, keepdims=True)) * unit) / norms[
            :, None
        ]
        np.add.at(grad, idx, g_rows)
    return math.fsum(terms), grad


def total_loss(
    seg_student: float,
    seg_teacher: float,
    feature_term: float,
    logits_term: float,
    affinity_term: float,
    betas: tuple[float, float, float, float] = (0.5, 0.01, 0.1, 0.1),
) -> float:
    """Combined objective: student segmentation plus weighted auxiliary terms."""
    values = (seg_student, seg_teacher, feature_term, logits_term, affinity_term)
    if not all(math.isfinite(v) for v in values):
        raise NumericError("non-finite loss component")
    if not all(math.isfinite(b) for b in betas):
        raise NumericError("non-finite beta")
    b1, b2, b3, b4 = betas
    return (
        seg_student
        + b1 * seg_teacher
        + b2 * feature_term
        + b3 * logits_term
        + b4 * affinity_term
    )


# ---------------------------------------------------------------------------
# Gradient verification (used by tests and the `loss-check` CLI command)
# ---------------------------------------------------------------------------


def finite_difference_gradient(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    x_flat = x.ravel()
    for i in range(x.size):
        orig = x_flat[i]
        x_flat[i] = orig + step
        hi = fn(x)
        x_flat[i] = orig - step
        lo = fn(x)
        x_flat[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def gradient_scale_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise deviation relative to the gradient scale."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(
        float(np.abs(analytic).max(initial=0.0)),
        float(np.abs(numeric).max(initial=0.0)),
        1e-12,
    )
    return float(np.abs(analytic - numeric).max(initial=0.0)) / scale


def verify_gradients(
    cases: int = 100, seed: int = 0, step: float = 1e-5
) -> list[tuple[str, float, bool]]:
    """Check each loss's analytic gradient against central differences.

    Returns (loss name, max scale-relative error over all cases, passed)
    rows with a 1e-4 pass threshold.
    """
    rng = np.random.default_rng(seed)
    worst = {"feature": 0.0, "logits": 0.0, "affinity": 0.0}

    for _ in range(cases):
        n = int(rng.integers(2, 7))
        width = int(rng.integers(2, 6))

        f_teacher = rng.normal(size=(n, width))
        f_student = rng.normal(size=(n, width))
        threshold = float(rng.uniform(0.3, 2.0))
        _, grad = feature_distill_loss(f_teacher, f_student, threshold)
        fd = finite_difference_gradient(
            lambda x: feature_distill_loss(f_teacher, x, threshold)[0],
            f_student.copy(),
            step,
        )
        worst["feature"] = max(worst["feature"], gradient_scale_error(grad, fd))

        z_teacher = rng.normal(size=(n, width))
        z_student = rng.normal(size=(n, width))
        temperature = float(rng.uniform(0.5, 4.0))
        _, grad = soft_logits_kl_loss(z_teacher, z_student, temperature)
        fd = finite_difference_gradient(
            lambda x: soft_logits_kl_loss(z_teacher, x, temperature)[0],
            z_student.copy(),
            step,
        )
        worst["logits"] = max(worst["logits"], gradient_scale_error(grad, fd))

        a_teacher = rng.normal(size=(n, width)) + 0.5
        a_student = rng.normal(size=(n, width)) + 0.5
        instances = [np.arange(n)]
        _, grad = iaad_loss(a_teacher, a_student, instances)
        fd = finite_difference_gradient(
            lambda x: iaad_loss(a_teacher, x, instances)[0], a_student.copy(), step
        )
        worst["affinity"] = max(worst["affinity"], gradient_scale_error(grad, fd))

    return [(name, err, err < 1e-4) for name, err in worst.items()]
