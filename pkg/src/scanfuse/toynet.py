"""Tiny per-point teacher/student network with hand-rolled backprop.

Both branches share one architecture: an encoder of two dense+tanh layers and
a head of one dense+tanh layer followed by a linear logits layer. The two
feature tap points used for distillation are the encoder output and the
pre-logits activation. Training is plain fixed-rate gradient descent; the
teacher sees the fused cloud, the student the current scan, and teacher rows
are matched to student rows through the fused scan's index map. Teacher
outputs are constants inside the distillation terms; the teacher itself
trains through its own (weighted) segmentation loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .distill import (
    DistillConfig,
    FeatureMap,
    LogitMap,
    feature_distill_loss,
    iaad_loss,
    soft_logits_kl_loss,
    total_loss,
)
from .errors import InvalidConfig, NumericError, ShapeError
from .fusion import FusedScan
from .kitti_io import DEFAULT_HARD_CLASSES, LabelSet, PointCloud
from .metrics import accumulate_confusion, miou

# Inputs are meters at scene scale; shrink coordinates so tanh units start in
# their sensitive range. Remission is already in [0, 1].
COORD_SCALE = 0.1


@dataclass(eq=False)
class ToyNetParams:
    """Weights for the 4-layer per-point network (4 -> H -> H -> H -> C)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray

    @classmethod
    def init(cls, seed: int, hidden: int = 16, n_classes: int = 2) -> "ToyNetParams":
        if hidden < 1 or n_classes < 2:
            raise InvalidConfig("hidden >= 1 and n_classes >= 2 required")
        rng = np.random.default_rng(seed)

        def dense(n_in: int, n_out: int) -> np.ndarray:
            return rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out))

        return cls(
            w1=dense(4, hidden),
            b1=np.zeros(hidden),
            w2=dense(hidden, hidden),
            b2=np.zeros(hidden),
            w3=dense(hidden, hidden),
            b3=np.zeros(hidden),
            w4=dense(hidden, n_classes),
            b4=np.zeros(n_classes),
        )

    @classmethod
    def zeros(cls, hidden: int = 16, n_classes: int = 2) -> "ToyNetParams":
        return cls(
            w1=np.zeros((4, hidden)),
            b1=np.zeros(hidden),
            w2=np.zeros((hidden, hidden)),
            b2=np.zeros(hidden),
            w3=np.zeros((hidden, hidden)),
            b3=np.zeros(hidden),
            w4=np.zeros((hidden, n_classes)),
            b4=np.zeros(n_classes),
        )

    def arrays(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3, self.w4, self.b4]

    def copy(self) -> "ToyNetParams":
        return ToyNetParams(*[a.copy() for a in self.arrays()])

    def equals(self, other: "ToyNetParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    @property
    def n_classes(self) -> int:
        return self.w4.shape[1]


@dataclass
class ForwardResult:
    feat_encoder: FeatureMap  # tap after the encoder stage
    feat_head: FeatureMap  # tap before the logits layer
    logits: LogitMap
    cache: dict


@dataclass
class LossBreakdown:
    seg_student: float
    seg_teacher: float
    feature: float
    logits: float
    affinity: float
    total: float


@dataclass
class TrainState:
    teacher: ToyNetParams
    student: ToyNetParams
    step: int
    learning_rate: float
    distill: DistillConfig
    class_to_index: dict[int, int]
    hard_classes: frozenset[int] = DEFAULT_HARD_CLASSES
    rng_seed: int = 0


def forward(params: ToyNetParams, cloud: PointCloud) -> ForwardResult:
    """Deterministic per-point evaluation; cache keeps backprop intermediates."""
    x = np.column_stack([cloud.points * COORD_SCALE, cloud.remission])
    h1 = np.tanh(x @ params.w1 + params.b1)
    h2 = np.tanh(h1 @ params.w2 + params.b2)
    h3 = np.tanh(h2 @ params.w3 + params.b3)
    z = h3 @ params.w4 + params.b4
    if not np.isfinite(z).all():
        raise NumericError("non-finite activations in forward pass")
    indices = np.arange(len(cloud), dtype=np.int64)
    return ForwardResult(
        feat_encoder=FeatureMap(h2, indices),
        feat_head=FeatureMap(h3, indices),
        logits=LogitMap(z),
        cache={"x": x, "h1": h1, "h2": h2, "h3": h3},
    )


def _backward(
    params: ToyNetParams,
    cache: dict,
    d_logits: np.ndarray,
    d_h2_extra: np.ndarray | None = None,
    d_h3_extra: np.ndarray | None = None,
) -> ToyNetParams:
    """Backprop upstream gradients (on logits and, optionally, the two feature
    taps) into parameter gradients."""
    x, h1, h2, h3 = cache["x"], cache["h1"], cache["h2"], cache["h3"]

    gw4 = h3.T @ d_logits
    gb4 = d_logits.sum(axis=0)
    d_h3 = d_logits @ params.w4.T
    if d_h3_extra is not None:
        d_h3 = d_h3 + d_h3_extra
    d_a3 = d_h3 * (1.0 - h3 * h3)

    gw3 = h2.T @ d_a3
    gb3 = d_a3.sum(axis=0)
    d_h2 = d_a3 @ params.w3.T
    if d_h2_extra is not None:
        d_h2 = d_h2 + d_h2_extra
    d_a2 = d_h2 * (1.0 - h2 * h2)

    gw2 = h1.T @ d_a2
    gb2 = d_a2.sum(axis=0)
    d_h1 = d_a2 @ params.w2.T
    d_a1 = d_h1 * (1.0 - h1 * h1)

    gw1 = x.T @ d_a1
    gb1 = d_a1.sum(axis=0)
    return ToyNetParams(gw1, gb1, gw2, gb2, gw3, gb3, gw4, gb4)


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient wrt the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if len(logits) != len(targets):
        raise ShapeError(f"{len(logits)} logit rows vs {len(targets)} targets")
    if len(targets) == 0:
        return 0.0, np.zeros_like(logits)
    if targets.min() < 0 or targets.max() >= logits.shape[1]:
        raise InvalidConfig("target class outside the logits range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = len(targets)
    loss = float(-log_probs[np.arange(n), targets].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


def _sgd(params: ToyNetParams, grads: ToyNetParams, lr: float) -> ToyNetParams:
    return ToyNetParams(
        *[p - lr * g for p, g in zip(params.arrays(), grads.arrays())]
    )


def remap_semantic(semantic: np.ndarray, class_to_index: dict[int, int]) -> np.ndarray:
    """Vectorized raw-class to train-class lookup; unmapped IDs are an error."""
    table = np.full(65536, -1, dtype=np.int64)
    for raw, idx in class_to_index.items():
        table[raw] = idx
    out = table[np.asarray(semantic, dtype=np.int64)]
    if (out < 0).any():
        missing = sorted(set(np.asarray(semantic)[out < 0].tolist()))
        raise InvalidConfig(f"classes {missing} missing from the class map")
    return out


def distill_rows(
    labels: LabelSet, hard_classes: frozenset[int]
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Hard-class row indices plus per-instance index sets for affinity terms."""
    hard_list = list(hard_classes)
    hard_mask = np.isin(labels.semantic, hard_list)
    hard_idx = np.flatnonzero(hard_mask)
    instances: list[np.ndarray] = []
    for iid in np.unique(labels.instance[hard_mask]):
        if iid == 0:
            continue
        members = np.flatnonzero(hard_mask & (labels.instance == iid))
        if len(members) >= 2:
            instances.append(members)
    return hard_idx, instances


def compute_gradients(
    state: TrainState,
    current_scan: PointCloud,
    fused_scan: FusedScan,
    labels: LabelSet,
) -> tuple[LossBreakdown, ToyNetParams, ToyNetParams | None]:
    """One joint forward/backward pass.

    Returns the loss breakdown, student parameter gradients, and teacher
    parameter gradients (None when the teacher's segmentation weight is 0).
    Distillation terms treat teacher outputs as constants.
    """
    n_cur = len(current_scan)
    if fused_scan.n_current != n_cur or len(labels) != n_cur:
        raise ShapeError(
            f"current scan ({n_cur}), labels ({len(labels)}) and fused prefix "
            f"({fused_scan.n_current}) must agree"
        )
    index_map = fused_scan.current_to_fused
    if len(index_map) != n_cur or index_map.max(initial=-1) >= len(fused_scan.cloud):
        raise ShapeError("current_to_fused does not map the current scan")

    cfg = state.distill
    b1, b2, b3, b4 = cfg.betas

    teacher_out = forward(state.teacher, fused_scan.cloud)
    student_out = forward(state.student, current_scan)

    targets_cur = remap_semantic(labels.semantic, state.class_to_index)
    targets_fused = remap_semantic(fused_scan.labels.semantic, state.class_to_index)

    seg_s, d_logits_s = cross_entropy(student_out.logits.logits, targets_cur)
    seg_t, d_logits_t = cross_entropy(teacher_out.logits.logits, targets_fused)

    # Teacher rows aligned 1:1 with student rows via the fused index map.
    t_enc = teacher_out.feat_encoder.features[index_map]
    t_head = teacher_out.feat_head.features[index_map]
    t_logits = teacher_out.logits.logits[index_map]
    s_enc = student_out.feat_encoder.features
    s_head = student_out.feat_head.features
    s_logits = student_out.logits.logits

    hard_idx, instances = distill_rows(labels, state.hard_classes)

    fd_enc, g_enc = feature_distill_loss(
        t_enc[hard_idx], s_enc[hard_idx], cfg.smooth_l1_T
    )
    fd_head, g_head = feature_distill_loss(
        t_head[hard_idx], s_head[hard_idx], cfg.smooth_l1_T
    )
    fd = fd_enc + fd_head
    sld, g_sld = soft_logits_kl_loss(
        t_logits[hard_idx], s_logits[hard_idx], cfg.temperature_P
    )
    iaad, g_iaad = iaad_loss(t_head, s_head, instances)

    breakdown = LossBreakdown(
        seg_student=seg_s,
        seg_teacher=seg_t,
        feature=fd,
        logits=sld,
        affinity=iaad,
        total=total_loss(seg_s, seg_t, fd, sld, iaad, cfg.betas),
    )

    d_logits = d_logits_s
    d_h2_extra = None
    d_h3_extra = None
    if b3 != 0.0 and len(hard_idx):
        d_logits = d_logits.copy()
        d_logits[hard_idx] += b3 * g_sld
    if b2 != 0.0 and len(hard_idx):
        d_h2_extra = np.zeros_like(s_enc)
        d_h2_extra[hard_idx] = b2 * g_enc
        d_h3_extra = np.zeros_like(s_head)
        d_h3_extra[hard_idx] = b2 * g_head
    if b4 != 0.0 and instances:
        if d_h3_extra is None:
            d_h3_extra = np.zeros_like(s_head)
        d_h3_extra += b4 * g_iaad

    student_grads = _backward(
        state.student, student_out.cache, d_logits, d_h2_extra, d_h3_extra
    )
    teacher_grads = None
    if b1 != 0.0:
        teacher_grads = _backward(state.teacher, teacher_out.cache, b1 * d_logits_t)
    return breakdown, student_grads, teacher_grads


def train_step(
    state: TrainState,
    current_scan: PointCloud,
    fused_scan: FusedScan,
    labels: LabelSet,
) -> tuple[TrainState, LossBreakdown]:
    """Gradient-descent update of both branches under the combined objective."""
    breakdown, student_grads, teacher_grads = compute_gradients(
        state, current_scan, fused_scan, labels
    )
    new_student = _sgd(state.student, student_grads, state.learning_rate)
    new_teacher = (
        _sgd(state.teacher, teacher_grads, state.learning_rate)
        if teacher_grads is not None
        else state.teacher.copy()
    )
    new_state = replace(
        state, teacher=new_teacher, student=new_student, step=state.step + 1
    )
    return new_state, breakdown


def supervised_step(
    params: ToyNetParams,
    scan: PointCloud,
    labels: LabelSet,
    class_to_index: dict[int, int],
    learning_rate: float,
) -> tuple[ToyNetParams, float]:
    """Distillation-free baseline: one cross-entropy step on a single scan."""
    out = forward(params, scan)
    targets = remap_semantic(labels.semantic, class_to_index)
    loss, d_logits = cross_entropy(out.logits.logits, targets)
    grads = _backward(params, out.cache, d_logits)
    return _sgd(params, grads, learning_rate), loss


def predict(params: ToyNetParams, cloud: PointCloud) -> np.ndarray:
    """Per-point argmax class indices."""
    return np.argmax(forward(params, cloud).logits.logits, axis=1)


def evaluate(
    params: ToyNetParams,
    scans: list[PointCloud],
    labels: list[LabelSet],
    class_to_index: dict[int, int],
    ignore: frozenset[int] = frozenset(),
) -> tuple[np.ndarray, float]:
    """Per-class IoU and mIoU of the net's predictions over given scans."""
    n_classes = params.n_classes
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for scan, lab in zip(scans, labels):
        pred = predict(params, scan)
        gt = remap_semantic(lab.semantic, class_to_index)
        accumulate_confusion(pred, gt, n_classes, ignore=ignore, out=cm)
    return miou(cm)
