from __future__ import annotations

import enum
import math

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

from .exceptions import DegenerateWeightsError

IndexArray = NDArray[np.intp]


class Scheme(str, enum.Enum):
    MULTINOMIAL = "multinomial"
    RESIDUAL = "residual"
    SYSTEMATIC = "systematic"


def normalize(log_weights: ArrayLike) -> tuple[NDArray[np.float64], float]:
    """Linear weights summing to one and the log of the mean unnormalized weight."""
    w = np.asarray(log_weights, dtype=float)
    if w.size == 0:
        raise DegenerateWeightsError("cannot normalize an empty weight vector")
    if np.isnan(w).any() or (w == np.inf).any():
        raise ValueError("log-weights must be finite or -inf")
    if not np.isfinite(w).any():
        raise DegenerateWeightsError(f"all {w.size} log-weights are -inf")
    lse = float(logsumexp(w))
    weights = np.exp(w - lse)
    weights /= weights.sum()
    return weights, lse - math.log(w.size)


def ess(weights: ArrayLike) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def should_resample(weights: ArrayLike, threshold: float | None) -> bool:
    """`threshold` is a fraction of N; `None` means resample unconditionally."""
    if threshold is None:
        return True
    w = np.asarray(weights, dtype=float)
    return ess(w) < threshold * w.size


def _cumulative(weights: NDArray[np.float64]) -> NDArray[np.float64]:
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return cum


def _pick(cum: NDArray[np.float64], positions: NDArray[np.float64]) -> IndexArray:
    return np.minimum(np.searchsorted(cum, positions, side="right"), cum.size - 1)


def multinomial(weights: NDArray[np.float64], n: int, rng: np.random.Generator) -> IndexArray:
    return _pick(_cumulative(weights), rng.random(n))


def systematic(weights: NDArray[np.float64], n: int, rng: np.random.Generator) -> IndexArray:
    positions = (rng.random() + np.arange(n)) / n
    return _pick(_cumulative(weights), positions)


def residual(weights: NDArray[np.float64], n: int, rng: np.random.Generator) -> IndexArray:
    scaled = n * weights
    counts = np.floor(scaled).astype(np.intp)
    deterministic = np.repeat(np.arange(weights.size), counts)
    rest = n - int(counts.sum())
    if rest == 0:
        return deterministic
    remainder = scaled - counts
    extra = systematic(remainder / remainder.sum(), rest, rng)
    return np.concatenate([deterministic, extra])


_SCHEMES = {
    Scheme.MULTINOMIAL: multinomial,
    Scheme.RESIDUAL: residual,
    Scheme.SYSTEMATIC: systematic,
}


def resample(
    weights: ArrayLike,
    n: int,
    scheme: Scheme | str = Scheme.SYSTEMATIC,
    rng: np.random.Generator | None = None,
) -> IndexArray:
    """Draw `n` ancestor indices; the resampled particles carry equal weights 1/n."""
    w = np.asarray(weights, dtype=float)
    if rng is None:
        rng = np.random.default_rng()
    return _SCHEMES[Scheme(scheme)](w, n, rng)
