"""Waypoint, retention-ratio and reconstruction objectives."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from tokendrive.errors import DimensionError, ParameterError
from tokendrive.numerics import Tensor, ops
from tokendrive.sparsify import RetentionMask


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0
    lambda2: float = 1.0
    R: float = 0.3

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParameterError("loss weights must be non-negative")
        if not 0 < self.R <= 1:
            raise ParameterError(f"retention ratio must lie in (0, 1], got {self.R}")


@dataclass
class FrameLoss:
    l_prun: Tensor | None = None
    l_rec: Tensor | None = None
    kept_ratio: float = 1.0


@dataclass
class LossReport:
    l_way: float
    l_prun: float
    l_rec: float
    total: float
    kept_ratio: float
    per_frame: list[tuple[float, float, float]] = field(default_factory=list)
    total_tensor: Tensor | None = None


def waypoint_loss(pred: Tensor | np.ndarray, gt: np.ndarray) -> Tensor:
    """Mean over waypoints of |dx| + |dy|."""
    pred = ops.as_tensor(pred)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.data.size != gt.size:
        raise DimensionError(f"waypoint count mismatch: {pred.data.size // 2} vs {gt.size // 2}")
    k = gt.size // 2
    diff = pred - Tensor(gt.reshape(pred.shape))
    return ops.sum_all(ops.abs_(diff)) * (1.0 / k)


def prune_ratio_loss(mask: RetentionMask, R: float) -> Tensor:
    """(R - kept fraction)^2 on the straight-through mask."""
    frac = ops.mean_all(mask.st)
    return ops.square(frac - R)


def rec_loss(F: Tensor | np.ndarray, F_hat: Tensor, mask: RetentionMask) -> Tensor:
    """Squared reconstruction error summed over channels and over pruned tokens."""
    F = ops.as_tensor(F)
    if F.shape != F_hat.shape or mask.n != F.rows:
        raise DimensionError(f"rec_loss: shapes {F.shape}, {F_hat.shape}, mask {mask.n}")
    per_token = ops.sum_cols(ops.square(F - F_hat))
    return ops.sum_all(per_token * (1.0 - mask.st))


def total_loss(l_way: Tensor, frames: Sequence[FrameLoss], w: LossWeights) -> LossReport:
    """L = L_way + lambda1 * L_prun + lambda2 * L_rec, pruning terms averaged over frames."""
    zero = Tensor(np.zeros((1, 1)))
    per_frame = []
    prun_terms, rec_terms = [], []
    for f in frames:
        p = f.l_prun if f.l_prun is not None else zero
        r = f.l_rec if f.l_rec is not None else zero
        prun_terms.append(p)
        rec_terms.append(r)
        per_frame.append((p.item(), r.item(), f.kept_ratio))
    n = max(len(frames), 1)
    l_prun = ops.sum_all(ops.concat_rows(prun_terms)) * (1.0 / n) if frames else zero
    l_rec = ops.sum_all(ops.concat_rows(rec_terms)) * (1.0 / n) if frames else zero
    total = l_way
    if w.lambda1:
        total = total + l_prun * w.lambda1
    if w.lambda2:
        total = total + l_rec * w.lambda2
    kept = float(np.mean([f.kept_ratio for f in frames])) if frames else 1.0
    return LossReport(l_way=l_way.item(), l_prun=l_prun.item(), l_rec=l_rec.item(),
                      total=total.item(), kept_ratio=kept, per_frame=per_frame,
                      total_tensor=total)


def combine(l_way: float, l_prun: float, l_rec: float, w: LossWeights) -> float:
    return l_way + w.lambda1 * l_prun + w.lambda2 * l_rec
