"""Rating distributions and the CDF-based earth mover's distance.

Rating classes are valued ``1..N``. Distances between two distributions are
computed from their cumulative sums, which is exact for ordered 1-D classes
with ground distance ``|i - j|**r``.

The array helpers (``emd_array``, ``certainty_array``) operate on the last
axis and broadcast, so the loss and metric code can evaluate whole batches.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidHistogram

SUM_TOL = 1e-9
RENORM_TOL = 1e-6


@dataclass(frozen=True)
class RatingDistribution:
    """Normalized histogram over rating classes ``1..N``.

    Probabilities whose sum is within ``1e-6`` of one are renormalized on
    construction; anything further off is rejected.
    """

    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64).reshape(-1)
        if p.size < 2:
            raise InvalidHistogram(f"need at least 2 classes, got {p.size}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InvalidHistogram("probabilities must be finite and non-negative")
        total = p.sum()
        if abs(total - 1.0) > RENORM_TOL:
            raise InvalidHistogram(f"probabilities sum to {total!r}, expected 1")
        p = p / total
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def N(self) -> int:
        return self.probs.size

    def __eq__(self, other):
        if not isinstance(other, RatingDistribution):
            return NotImplemented
        return self.N == other.N and bool(np.all(np.abs(self.probs - other.probs) <= SUM_TOL))

    def __hash__(self):
        return hash(self.N)

    def __repr__(self):
        vals = ", ".join(f"{v:.4g}" for v in self.probs)
        return f"RatingDistribution([{vals}])"

    @classmethod
    def one_hot(cls, cls_value: int, N: int = 10) -> "RatingDistribution":
        if not 1 <= cls_value <= N:
            raise InvalidHistogram(f"class {cls_value} outside 1..{N}")
        p = np.zeros(N)
        p[cls_value - 1] = 1.0
        return cls(p)

    @classmethod
    def uniform(cls, N: int = 10) -> "RatingDistribution":
        return cls(np.full(N, 1.0 / N))


@dataclass(frozen=True)
class EmdParams:
    """Hyperparameters of the EMD-based losses.

    ``r`` is the norm order, ``k`` scales EMD inside the certainty transform,
    ``beta`` is the patch-weight exponent and ``epsilon`` the certainty floor.
    """

    r: float = 2.0
    k: float = 1.2
    beta: float = 0.4
    epsilon: float = 1e-6

    def __post_init__(self):
        if not self.r >= 1:
            raise ValueError(f"r must be >= 1, got {self.r}")
        if not self.k > 0:
            raise ValueError(f"k must be > 0, got {self.k}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not 0 < self.epsilon < 1:
            raise ValueError(f"epsilon must be in (0, 1), got {self.epsilon}")


def _probs(d) -> np.ndarray:
    if isinstance(d, RatingDistribution):
        return d.probs
    return np.asarray(d, dtype=np.float64)


def normalize(counts) -> RatingDistribution:
    """Turn raw vote counts into a rating distribution."""
    c = np.asarray(counts, dtype=np.float64).reshape(-1)
    if c.size < 2:
        raise InvalidHistogram(f"need at least 2 classes, got {c.size}")
    if np.any(c < 0) or not np.all(np.isfinite(c)):
        raise InvalidHistogram("counts must be finite and non-negative")
    total = c.sum()
    if total <= 0:
        raise InvalidHistogram("histogram has no votes")
    return RatingDistribution(c / total)


def class_values(N: int) -> np.ndarray:
    return np.arange(1, N + 1, dtype=np.float64)


def mean_score(d) -> float:
    """Expected rating ``sum_i i * p_i``; accepts a distribution or a batch array."""
    p = _probs(d)
    out = p @ class_values(p.shape[-1])
    return float(out) if np.ndim(out) == 0 else out


def cdf(d) -> np.ndarray:
    return np.cumsum(_probs(d), axis=-1)


def emd_array(p: np.ndarray, q: np.ndarray, r: float = 2.0) -> np.ndarray:
    """Batched r-norm EMD over the last axis."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape[-1] != q.shape[-1]:
        raise DimensionMismatch(f"class counts differ: {p.shape[-1]} vs {q.shape[-1]}")
    gap = np.abs(np.cumsum(p, axis=-1) - np.cumsum(q, axis=-1))
    return np.mean(gap**r, axis=-1) ** (1.0 / r)


def emd(p, q, r: float = 2.0) -> float:
    """r-norm earth mover's distance between two rating distributions.

    >>> round(emd(RatingDistribution.one_hot(1), RatingDistribution.one_hot(10)), 6)
    0.948683
    """
    return float(emd_array(_probs(p), _probs(q), r))


def certainty_array(emd_value, k: float = 1.2, epsilon: float = 1e-6) -> np.ndarray:
    c = 1.0 - k * np.asarray(emd_value, dtype=np.float64)
    return np.where(c < epsilon, epsilon, c)


def emd_certainty(emd_value: float, params: EmdParams = EmdParams()) -> float:
    """Certainty ``max(eps, 1 - k * emd)``; near 1 for a good prediction."""
    if emd_value < 0:
        raise ValueError("emd_value must be non-negative")
    return float(certainty_array(emd_value, params.k, params.epsilon))


def patch_weight(emd_c, beta: float = 0.4):
    """Patch weight ``1 - emd_c**beta``; large for poorly predicted patches."""
    w = 1.0 - np.asarray(emd_c, dtype=np.float64) ** beta
    return float(w) if np.ndim(w) == 0 else w
