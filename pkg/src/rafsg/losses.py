"""Training losses between predicted and target dense maps.

Every loss has a matching ``*_grad`` giving d(loss)/d(pred) in closed form.
Values are plain sums unless stated; normalisation happens in ``total_loss``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

RAF_REG_KINDS = ("l1", "smoothl1", "l2")
SMOOTH_L1_BETA = 1.0


@dataclass(frozen=True)
class LossConfig:
    lambda_offset: float = 1.0
    lambda_size: float = 0.1
    alpha: float = 2.0
    gamma: float = 4.0
    raf_reg_kind: str = "l1"
    beta: float = 10.0
    clamp_eps: float = 1e-4

    def __post_init__(self):
        if self.raf_reg_kind not in RAF_REG_KINDS:
            raise ValueError(f"raf_reg_kind must be one of {RAF_REG_KINDS}")
        weights = (self.lambda_offset, self.lambda_size, self.alpha, self.gamma, self.beta)
        if min(weights) < 0:
            raise ValueError("loss weights must be non-negative")

    def snapshot(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    center_loss: float
    offset_loss: float
    size_loss: float
    raf_pos_loss: float
    raf_neg_loss: float
    total: float
    n_objects: int

    def to_dict(self) -> dict:
        return asdict(self)


def clamped_sigmoid(logits, eps: float = 1e-4) -> np.ndarray:
    return np.clip(expit(np.asarray(logits, dtype=np.float64)), eps, 1 - eps)


def _check_open_unit(pred):
    if not (np.all(pred > 0) and np.all(pred < 1)):
        raise ValueError("heatmap predictions must lie strictly inside (0, 1)")


def gaussian_focal_loss(pred, target, alpha=2.0, gamma=4.0) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_open_unit(pred)
    pos = target == 1
    pos_loss = -((1 - pred) ** alpha) * np.log(pred)
    neg_loss = -((1 - target) ** gamma) * pred**alpha * np.log1p(-pred)
    return float(np.where(pos, pos_loss, neg_loss).sum())


def gaussian_focal_loss_grad(pred, target, alpha=2.0, gamma=4.0) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_open_unit(pred)
    pos = target == 1
    g_pos = alpha * (1 - pred) ** (alpha - 1) * np.log(pred) - (1 - pred) ** alpha / pred
    g_neg = -((1 - target) ** gamma) * (
        alpha * pred ** (alpha - 1) * np.log1p(-pred) - pred**alpha / (1 - pred)
    )
    return np.where(pos, g_pos, g_neg)


def masked_l1(pred, target, mask) -> float:
    diff = np.abs(np.asarray(pred, dtype=np.float64) - target)
    return float((diff * (np.asarray(mask) > 0)).sum())


def masked_l1_grad(pred, target, mask) -> np.ndarray:
    return np.sign(np.asarray(pred, dtype=np.float64) - target) * (np.asarray(mask) > 0)


def _reg(diff, kind):
    if kind == "l1":
        return np.abs(diff)
    if kind == "l2":
        return diff**2
    ad = np.abs(diff)
    return np.where(ad < SMOOTH_L1_BETA, 0.5 * diff**2 / SMOOTH_L1_BETA, ad - 0.5 * SMOOTH_L1_BETA)


def _reg_grad(diff, kind):
    if kind == "l1":
        return np.sign(diff)
    if kind == "l2":
        return 2 * diff
    return np.where(np.abs(diff) < SMOOTH_L1_BETA, diff / SMOOTH_L1_BETA, np.sign(diff))


def _raf_parts(pred, target, weights):
    p = weights.shape[0]
    pred = np.asarray(pred, dtype=np.float64).reshape(p, 2, *weights.shape[1:])
    target = np.asarray(target, dtype=np.float64).reshape(p, 2, *weights.shape[1:])
    pos = weights > 0
    neg = np.all(target == 0, axis=1)
    return pred, target, pos, neg


def raf_loss(pred, target, weights, kind: str = "l1") -> tuple[float, float]:
    """Positive (weighted, inside GT paths) and negative (zero-target) RAF terms.

    Each term is averaged over its own (predicate, y, x) location count.
    """
    weights = np.asarray(weights, dtype=np.float64)
    pred, target, pos, neg = _raf_parts(pred, target, weights)
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    per_loc = _reg(pred - target, kind).sum(axis=1)
    raf_pos = float((weights * per_loc)[pos].sum() / n_pos) if n_pos else 0.0
    raf_neg = float(np.abs(pred).sum(axis=1)[neg].sum() / n_neg) if n_neg else 0.0
    return raf_pos, raf_neg


def raf_loss_grad(pred, target, weights, kind: str = "l1") -> tuple[np.ndarray, np.ndarray]:
    weights = np.asarray(weights, dtype=np.float64)
    shape = np.shape(pred)
    pred, target, pos, neg = _raf_parts(pred, target, weights)
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    g_pos = np.zeros_like(pred)
    g_neg = np.zeros_like(pred)
    if n_pos:
        g_pos = _reg_grad(pred - target, kind) * (weights * pos)[:, None] / n_pos
    if n_neg:
        g_neg = np.sign(pred) * neg[:, None] / n_neg
    return g_pos.reshape(shape), g_neg.reshape(shape)


def total_loss(preds, targets, cfg: LossConfig = LossConfig(), n_objects=None, logits=True):
    """Combine per-scale losses into one breakdown.

    ``preds`` carry heatmap logits (or probabilities with ``logits=False``);
    ``n_objects`` defaults to the number of exact-1 heatmap peaks.
    """
    center = offset = size = raf_pos = raf_neg = 0.0
    peaks = 0
    for pred, tgt in zip(preds, targets, strict=True):
        if logits:
            heat = clamped_sigmoid(pred.centers, cfg.clamp_eps)
        else:
            heat = np.clip(np.asarray(pred.centers, dtype=np.float64), cfg.clamp_eps, 1 - cfg.clamp_eps)
        center += gaussian_focal_loss(heat, tgt.centers, cfg.alpha, cfg.gamma)
        offset += masked_l1(pred.offsets, tgt.offsets, tgt.reg_mask)
        size += masked_l1(pred.sizes, tgt.sizes, tgt.reg_mask)
        pos, neg = raf_loss(pred.rafs, tgt.rafs, tgt.raf_weights, cfg.raf_reg_kind)
        raf_pos += pos
        raf_neg += neg
        peaks += int((np.asarray(tgt.centers) == 1).sum())
    n = max(1, peaks if n_objects is None else n_objects)
    total = (center + cfg.lambda_offset * offset + cfg.lambda_size * size) / n
    total += raf_pos + cfg.beta * raf_neg
    return LossBreakdown(center, offset, size, raf_pos, raf_neg, float(total), n)
