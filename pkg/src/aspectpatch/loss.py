"""EMD-certainty losses over predicted logits, with analytic gradients.

Every variant is a per-patch term of the certainty ``c = max(eps, 1 - k*EMD)``:

=========  =====================
simple     ``-c``
weighted   ``-(1 - c**beta) * c``
log        ``-log(c)``
full       ``-(1 - c**beta) * log(c)``
=========  =====================

The collective strategy averages the term over the patches cropped from one
image; the individual strategy uses it for a single patch.

The weighted variant is zero both at ``c = 1`` and as ``c -> 0`` and dips
below zero in between, bottoming out at ``c = (1 + beta)**(-1/beta)``
(about 0.43 for ``beta = 0.4``). A perfect prediction is therefore not its
minimizer: its derivative in ``c`` at ``c = 1`` is ``+beta``, so gradient
descent pulls certainty away from 1 towards that interior point. The other
three variants are minimized at ``c = 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyPatchSet
from .ratings import EmdParams, RatingDistribution, certainty_array

COLLECTIVE = "collective"
INDIVIDUAL = "individual"

# slug -> (strategy, use_log, use_weight)
VARIANTS = {
    "col-emd-simple": (COLLECTIVE, False, False),
    "col-emd-weighted": (COLLECTIVE, False, True),
    "col-emd-log": (COLLECTIVE, True, False),
    "col-emd": (COLLECTIVE, True, True),
    "ind-emd-simple": (INDIVIDUAL, False, False),
    "ind-emd-weighted": (INDIVIDUAL, False, True),
    "ind-emd-log": (INDIVIDUAL, True, False),
    "ind-emd": (INDIVIDUAL, True, True),
}


@dataclass(frozen=True)
class Schedule:
    init_lr: float
    decay_factor: float
    decay_interval: int
    epochs: int


# Learning-rate schedule and epoch budget per variant.
TRAINING_SCHEDULES = {
    "col-emd-simple": Schedule(1e-4, 0.85, 5, 50),
    "col-emd-weighted": Schedule(1e-3, 0.85, 5, 50),
    "col-emd-log": Schedule(1e-3, 0.7, 10, 50),
    "col-emd": Schedule(1e-3, 0.7, 10, 50),
    "ind-emd-simple": Schedule(1e-3, 0.9, 10, 200),
    "ind-emd-weighted": Schedule(1e-2, 0.9, 10, 200),
    "ind-emd-log": Schedule(1e-3, 0.9, 10, 200),
    "ind-emd": Schedule(1e-2, 0.9, 10, 200),
}

PRETRAIN_SCHEDULE = Schedule(1e-3, 0.95, 10, 100)


@dataclass(frozen=True)
class LossSpec:
    strategy: str = INDIVIDUAL
    use_log: bool = True
    use_weight: bool = True
    params: EmdParams = field(default_factory=EmdParams)
    stop_weight_gradient: bool = False

    def __post_init__(self):
        if self.strategy not in (COLLECTIVE, INDIVIDUAL):
            raise ValueError(f"unknown strategy {self.strategy!r}")

    @classmethod
    def from_slug(cls, slug: str, params: EmdParams | None = None, **kw) -> "LossSpec":
        try:
            strategy, use_log, use_weight = VARIANTS[slug]
        except KeyError:
            raise ValueError(
                f"unknown loss {slug!r}; valid variants: {', '.join(VARIANTS)}"
            ) from None
        return cls(strategy, use_log, use_weight, params or EmdParams(), **kw)

    @property
    def slug(self) -> str:
        for name, key in VARIANTS.items():
            if key == (self.strategy, self.use_log, self.use_weight):
                return name
        raise AssertionError("unreachable")

    @property
    def schedule(self) -> Schedule:
        return TRAINING_SCHEDULES[self.slug]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class PatchPrediction:
    logits: np.ndarray

    @property
    def dist(self) -> RatingDistribution:
        return RatingDistribution(softmax(self.logits))


def _truth_array(truth) -> np.ndarray:
    if isinstance(truth, RatingDistribution):
        return truth.probs
    return np.asarray(truth, dtype=np.float64)


def _term(spec: LossSpec, c: np.ndarray):
    """Per-patch loss value and its derivative with respect to certainty."""
    beta = spec.params.beta
    if spec.use_log:
        f, df = -np.log(c), -1.0 / c
    else:
        f, df = -c, -np.ones_like(c)
    if not spec.use_weight:
        return f, df
    w = 1.0 - c**beta
    d = w * df
    if not spec.stop_weight_gradient:
        d = d - beta * c ** (beta - 1.0) * f
    return w * f, d


def _emd2_and_grad(logits: np.ndarray, truth: np.ndarray):
    """2-norm EMD of softmax(logits) against truth, and d EMD / d logits."""
    if logits.shape[-1] != truth.shape[-1]:
        raise DimensionMismatch(f"class counts differ: {logits.shape[-1]} vs {truth.shape[-1]}")
    N = logits.shape[-1]
    p = softmax(logits)
    gap = np.cumsum(p, axis=-1) - np.cumsum(truth, axis=-1)
    e = np.sqrt(np.mean(gap**2, axis=-1))
    safe = np.where(e > 0, e, 1.0)
    d_gap = gap / (N * safe[..., None])
    # d p_i collects every cumulative gap at or after class i
    d_p = np.cumsum(d_gap[..., ::-1], axis=-1)[..., ::-1]
    d_logits = p * (d_p - np.sum(d_p * p, axis=-1, keepdims=True))
    d_logits = np.where((e > 0)[..., None], d_logits, 0.0)
    return e, d_logits


def patch_loss_and_grad(spec: LossSpec, logits, truth):
    """Batched per-patch loss values and gradients with respect to logits.

    ``logits`` is ``(..., N)``; ``truth`` broadcasts against it.
    """
    if spec.params.r != 2:
        raise ValueError("gradients are only defined for r = 2")
    logits = np.asarray(logits, dtype=np.float64)
    truth = np.broadcast_to(_truth_array(truth), logits.shape)
    e, d_emd = _emd2_and_grad(logits, truth)
    k, eps = spec.params.k, spec.params.epsilon
    c = certainty_array(e, k, eps)
    value, d_c = _term(spec, c)
    # the clamped branch is flat in EMD
    d_c_d_emd = np.where(1.0 - k * e < eps, 0.0, -k)
    return value, (d_c * d_c_d_emd)[..., None] * d_emd


def emd_loss_and_grad(logits, truth):
    """Plain 2-norm EMD as a loss, used for square-resize pre-training."""
    logits = np.asarray(logits, dtype=np.float64)
    truth = np.broadcast_to(_truth_array(truth), logits.shape)
    return _emd2_and_grad(logits, truth)


def _per_patch_value(spec: LossSpec, logits, truth) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    truth = _truth_array(truth)
    if logits.shape[-1] != truth.shape[-1]:
        raise DimensionMismatch(f"class counts differ: {logits.shape[-1]} vs {truth.shape[-1]}")
    p = softmax(logits)
    r = spec.params.r
    gap = np.abs(np.cumsum(p, axis=-1) - np.cumsum(truth, axis=-1))
    e = np.mean(gap**r, axis=-1) ** (1.0 / r)
    c = certainty_array(e, spec.params.k, spec.params.epsilon)
    return _term(spec, c)[0]


def per_patch_loss(spec: LossSpec, pred: PatchPrediction, truth) -> float:
    """Loss of a single patch under one of the eight variants."""
    return float(_per_patch_value(spec, pred.logits, truth))


def collective_loss(spec: LossSpec, preds, truth) -> float:
    """Mean per-patch loss over the patch set cropped from one image."""
    preds = list(preds)
    if not preds:
        raise EmptyPatchSet("collective loss needs at least one patch")
    logits = np.stack([np.asarray(p.logits, dtype=np.float64) for p in preds])
    return float(np.mean(_per_patch_value(spec, logits, truth)))


def loss_gradient(spec: LossSpec, pred: PatchPrediction, truth) -> np.ndarray:
    """Gradient of ``per_patch_loss`` with respect to the patch logits.

    Zero at an exact match (EMD = 0) and inside the clamped region.
    """
    return patch_loss_and_grad(spec, pred.logits, truth)[1]
