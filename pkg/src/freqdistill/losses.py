"""Training objectives: segmentation losses, distillation MSE, phase mixing.

Phase I optimizes dice + BCE alone. Phases II and III share one
formula: lambda1*(dice + bce) + lambda2*L1_distill + lambda3*L2_distill,
with the distillation targets treated as constants (the teachers are
frozen). The phase-II weights deliberately sum to less than one; they
are applied literally, no renormalization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from . import autodiff as ad
from .autodiff import Tensor4
from .errors import DimensionError

DICE_SMOOTH = 1.0
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 1.0
    alpha2: float = 0.5
    lambda1: float = 0.6
    lambda2: float = 0.1
    lambda3: float = 0.1

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative, got {getattr(self, name)}")


@dataclass(frozen=True)
class LossBreakdown:
    """Per-batch scalar loss values for the training log."""

    dice: float
    bce: float
    l1_distill: float
    l2_distill: float
    total: float


def _check_same_shape(a: Tensor4, b: Tensor4, what: str) -> None:
    if a.shape != b.shape:
        for axis, (da, db) in enumerate(zip(a.shape, b.shape)):
            if da != db:
                name = ("batch", "channels", "height", "width")[axis]
                raise DimensionError(name, f"{what}: shapes differ, {a.shape} vs {b.shape}")


def dice_loss(pred: Tensor4, gt: Tensor4) -> Tensor4:
    """1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps), eps = 1."""
    _check_same_shape(pred, gt, "dice_loss")
    inter = ad.sum_all(ad.mul(pred, gt))
    denom = ad.sum_all(pred) + ad.sum_all(gt) + DICE_SMOOTH
    return 1.0 - (2.0 * inter + DICE_SMOOTH) / denom


def bce_loss(pred: Tensor4, gt: Tensor4) -> Tensor4:
    """Mean of -[g log p + (1-g) log(1-p)], p clamped to [1e-7, 1-1e-7]."""
    _check_same_shape(pred, gt, "bce_loss")
    p = ad.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    term = ad.mul(gt, ad.log(p)) + ad.mul(1.0 - gt, ad.log(1.0 - p))
    return -ad.mean_all(term)


def distill_mse(student: Tensor4, target: Tensor4) -> Tensor4:
    """Mean squared error over all elements; target carries no gradient."""
    _check_same_shape(student, target, "distill_mse")
    return ad.mean_all(ad.square(ad.sub(student, target)))


# the L1 (semantic / low-frequency) and L2 (structural / high-frequency)
# alignment losses share the MSE contract
distill_l1 = distill_mse
distill_l2 = distill_mse


def total_distill(l1: Tensor4, l2: Tensor4, weights: LossWeights = LossWeights()) -> Tensor4:
    """alpha1 * L1 + alpha2 * L2."""
    return weights.alpha1 * l1 + weights.alpha2 * l2


def phase_loss(
    phase: int,
    dice: Tensor4,
    bce: Tensor4,
    l1_distill: Optional[Tensor4] = None,
    l2_distill: Optional[Tensor4] = None,
    weights: LossWeights = LossWeights(),
) -> Tensor4:
    """Mix component losses per the active training phase."""
    if phase not in (1, 2, 3):
        raise ValueError(f"phase must be 1, 2 or 3, got {phase}")
    if phase == 1:
        return dice + bce
    if l1_distill is None or l2_distill is None:
        raise ValueError(f"phase {phase} requires both distillation losses")
    seg = dice + bce
    return weights.lambda1 * seg + weights.lambda2 * l1_distill + weights.lambda3 * l2_distill
