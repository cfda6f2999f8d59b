"""Jaccard / Dice / Tversky overlap coefficients and their training losses.

Every coefficient is a ratio over the three mutually exclusive partitions
of a prediction mask P and ground-truth mask G:

    tp = |P intersect G|    fp = |P minus G|    fn = |G minus P|

    jaccard = tp / (tp + fp + fn)
    dice    = 2 tp / (2 tp + fp + fn)
    tversky = tp / (tp + alpha * fp + beta * fn),  alpha + beta = 1

with loss = 1 - coefficient. Tversky with alpha = beta = 0.5 is exactly
Dice; beta > 0.5 penalizes missed foreground harder, which is the knob for
class-imbalanced volumes. Soft (differentiable) forms replace P with a
probability per voxel and smooth the ratio as (num + eps) / (den + eps).

Hard coefficients stay unsmoothed; two empty masks count as perfect
agreement (coefficient 1, loss 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams, NonBinaryInput, OutOfRange, ShapeMismatch

JACCARD = "jaccard"
DICE = "dice"
TVERSKY = "tversky"
LOSS_KINDS = (JACCARD, DICE, TVERSKY)


@dataclass(frozen=True)
class OverlapCounts:
    """The three set partitions every overlap coefficient consumes."""

    tp: float
    fp: float
    fn: float

    def __post_init__(self):
        if self.tp < 0 or self.fp < 0 or self.fn < 0:
            raise ValueError(f"overlap counts must be non-negative, got {self}")


@dataclass(frozen=True)
class TverskyParams:
    """False-positive weight alpha and false-negative weight beta, alpha + beta = 1."""

    alpha: float = 0.5
    beta: float = 0.5
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise InvalidParams(
                f"need alpha, beta >= 0 with alpha + beta = 1, got alpha={self.alpha} beta={self.beta}"
            )
        if self.epsilon <= 0:
            raise InvalidParams(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def from_alpha(cls, alpha: float, epsilon: float = 1e-6) -> "TverskyParams":
        return cls(alpha=alpha, beta=1.0 - alpha, epsilon=epsilon)


def _check_binary(arr: np.ndarray, error=NonBinaryInput) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise error("mask contains values other than 0 and 1")
    return arr


def counts(pred: np.ndarray, truth: np.ndarray) -> OverlapCounts:
    """Partition counts for two hard binary masks."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    _check_binary(pred)
    _check_binary(truth)
    p = pred.ravel()
    g = truth.ravel()
    tp = float(p @ g)
    return OverlapCounts(tp=tp, fp=float(p.sum() - tp), fn=float(g.sum() - tp))


def soft_counts(pred: np.ndarray, truth: np.ndarray) -> OverlapCounts:
    """Partition sums with a probability-valued prediction; exact on hard inputs."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"shapes differ: {pred.shape} vs {truth.shape}")
    if np.any(pred < 0.0) or np.any(pred > 1.0):
        raise OutOfRange("prediction probabilities must lie in [0, 1]")
    _check_binary(truth)
    p = pred.ravel()
    g = truth.ravel()
    tp = float(p @ g)
    fp = float(p @ (1.0 - g))
    fn = float((1.0 - p) @ g)
    return OverlapCounts(tp=tp, fp=fp, fn=fn)


def jaccard(c: OverlapCounts) -> float:
    """Intersection over union; both-empty masks agree perfectly."""
    den = c.tp + c.fp + c.fn
    if den == 0.0:
        return 1.0
    return c.tp / den


def dice(c: OverlapCounts) -> float:
    """Twice the intersection over the size sum; both-empty masks agree perfectly."""
    den = 2.0 * c.tp + c.fp + c.fn
    if den == 0.0:
        return 1.0
    return 2.0 * c.tp / den


def tversky(c: OverlapCounts, p: TverskyParams) -> float:
    """Asymmetrically weighted overlap; reduces to dice at alpha = beta = 0.5."""
    if abs(p.alpha + p.beta - 1.0) > 1e-12:
        raise InvalidParams(f"alpha + beta must be 1, got {p.alpha + p.beta}")
    den = c.tp + p.alpha * c.fp + p.beta * c.fn
    if den == 0.0:
        return 1.0
    return c.tp / den


def jaccard_loss(c: OverlapCounts) -> float:
    return 1.0 - jaccard(c)


def dice_loss(c: OverlapCounts) -> float:
    return 1.0 - dice(c)


def tversky_loss(c: OverlapCounts, p: TverskyParams) -> float:
    return 1.0 - tversky(c, p)


def _soft_ratio_terms(c: OverlapCounts, which: str, p: TverskyParams):
    """Numerator/denominator of the smoothed coefficient plus per-voxel
    derivative weights (num_w, den_w applied as num_w[g] and den_w[g])."""
    if which == JACCARD:
        num = c.tp
        den = c.tp + c.fp + c.fn
        dnum = (0.0, 1.0)  # d num / d p_i for g_i = 0, 1
        dden = (1.0, 0.0)  # on foreground, tp growth cancels fn shrinkage
    elif which == DICE:
        num = 2.0 * c.tp
        den = 2.0 * c.tp + c.fp + c.fn
        dnum = (0.0, 2.0)
        dden = (1.0, 1.0)
    elif which == TVERSKY:
        num = c.tp
        den = c.tp + p.alpha * c.fp + p.beta * c.fn
        dnum = (0.0, 1.0)
        dden = (p.alpha, 1.0 - p.beta)
    else:
        raise ValueError(f"unknown loss kind {which!r}")
    return num, den, dnum, dden


def soft_loss_grad(
    pred: np.ndarray,
    truth: np.ndarray,
    which: str = DICE,
    params: TverskyParams | None = None,
) -> tuple[float, np.ndarray]:
    """Smoothed soft loss and its analytic gradient with respect to pred.

    The coefficient is (num + eps) / (den + eps); the gradient follows the
    quotient rule, vectorized over the foreground/background split of the
    truth mask.
    """
    params = params or TverskyParams()
    c = soft_counts(pred, truth)
    num, den, dnum, dden = _soft_ratio_terms(c, which, params)
    eps = params.epsilon
    num_s = num + eps
    den_s = den + eps

    g = np.asarray(truth, dtype=np.float64)
    dnum_i = np.where(g == 1.0, dnum[1], dnum[0])
    dden_i = np.where(g == 1.0, dden[1], dden[0])
    # d coef / d p_i by the quotient rule; loss gradient is its negation
    dcoef = (dnum_i * den_s - num_s * dden_i) / (den_s * den_s)
    return 1.0 - num_s / den_s, -dcoef
