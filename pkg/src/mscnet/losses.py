"""Composite BCE + IoU training loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor, ops


@dataclass
class LossConfig:
    lam: float = 0.6
    eps: float = 1e-7
    reduction: str = "mean"  # BCE reduction over pixels: "mean" or "sum"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be mean or sum, got {self.reduction!r}")


def _target(g, like: Tensor) -> Tensor:
    g = g if isinstance(g, Tensor) else Tensor(np.asarray(g), dtype=like.dtype)
    if g.shape != like.shape:
        raise ValueError(f"prediction {like.shape} and target {g.shape} differ in shape")
    return g


def bce_loss(pred: Tensor, target, eps: float = 1e-7, reduction: str = "mean") -> Tensor:
    g = _target(target, pred)
    p = ops.clamp(pred, eps, 1.0 - eps)
    per_px = ops.neg(g * ops.log(p) + (1.0 - g) * ops.log(1.0 - p))
    return ops.mean(per_px) if reduction == "mean" else ops.sum(per_px)


def iou_loss(pred: Tensor, target) -> Tensor:
    """1 - (sum pg + 1) / (sum(p + g - pg) + 1) per image, averaged over the batch."""
    g = _target(target, pred)
    axes = tuple(range(1, pred.ndim))
    pg = pred * g
    inter = ops.sum(pg, axis=axes)
    union = ops.sum(pred + g - pg, axis=axes)
    return ops.mean(1.0 - (inter + 1.0) / (union + 1.0))


def total_loss(pred: Tensor, target, cfg: LossConfig | None = None) -> Tensor:
    cfg = cfg or LossConfig()
    loss = bce_loss(pred, target, cfg.eps, cfg.reduction)
    if cfg.lam == 0:
        return loss
    return loss + cfg.lam * iou_loss(pred, target)
