"""Training losses. Each ``*_grad`` function returns (loss, d loss / d prediction)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sir.nn import sigmoid

PROB_CLAMP = 1e-7
FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0


@dataclass(frozen=True)
class LossBreakdown:
    sem: float
    vote: float
    reg: float
    cls: float
    res: float
    iou: float
    total: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("sem", "vote", "reg", "cls", "res", "iou", "total")}


def _same_shape(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def l1_loss_grad(pred, target):
    pred, target = _same_shape(pred, target)
    if pred.size == 0:
        return 0.0, np.zeros_like(pred)
    return float(np.abs(pred - target).mean()), np.sign(pred - target) / pred.size


def l1_loss(pred, target) -> float:
    """Mean absolute error over all elements."""
    return l1_loss_grad(pred, target)[0]


def focal_loss_grad(logits, labels, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA):
    z, y = _same_shape(logits, labels)
    if z.size == 0:
        return 0.0, np.zeros_like(z)
    raw = sigmoid(z)
    p = np.clip(raw, PROB_CLAMP, 1 - PROB_CLAMP)
    pos = y > 0.5
    pt = np.where(pos, p, 1 - p)
    at = np.where(pos, alpha, 1 - alpha)
    one_m = 1 - pt
    log_pt = np.log(pt)
    loss = -at * one_m ** gamma * log_pt
    # d loss / d pt
    if gamma == 0:
        dpt = -at / pt
    else:
        dpt = -at * (-gamma * one_m ** (gamma - 1) * log_pt + one_m ** gamma / pt)
    dp = np.where(pos, dpt, -dpt)
    clamped = (raw < PROB_CLAMP) | (raw > 1 - PROB_CLAMP)
    dz = np.where(clamped, 0.0, dp * raw * (1 - raw))
    return float(loss.mean()), dz / z.size


def focal_loss(logits, labels, alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> float:
    """Binary focal loss on logits, averaged over elements."""
    return focal_loss_grad(logits, labels, alpha, gamma)[0]


def soft_iou_label(iou):
    """Soft classification target q = min(1, max(0, 2 IoU - 0.5))."""
    q = np.minimum(1.0, np.maximum(0.0, 2.0 * np.asarray(iou, dtype=np.float64) - 0.5))
    return float(q) if np.ndim(q) == 0 else q


def bce_with_logits_grad(logits, targets):
    z, q = _same_shape(logits, targets)
    if z.size == 0:
        return 0.0, np.zeros_like(z)
    loss = np.maximum(z, 0) - z * q + np.log1p(np.exp(-np.abs(z)))
    return float(loss.mean()), (sigmoid(z) - q) / z.size


def bce_with_logits(logits, targets) -> float:
    return bce_with_logits_grad(logits, targets)[0]


def total_loss(sem=0.0, vote=0.0, reg=0.0, cls=0.0, res=0.0, iou=0.0) -> LossBreakdown:
    parts = dict(sem=sem, vote=vote, reg=reg, cls=cls, res=res, iou=iou)
    for k, v in parts.items():
        if not math.isfinite(v):
            raise ValueError(f"loss component {k} is not finite: {v}")
    return LossBreakdown(**{k: float(v) for k, v in parts.items()}, total=float(sum(parts.values())))
