"""Exact smoothing on a discretized state space, used as ground truth."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from functools import cache, lru_cache

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy.special import ndtr

from .exceptions import ImpossibleObservationError, UnsupportedModelError
from .model import ModelSpec, ObservationSeq, check_observations

FloatArray = NDArray[np.float64]

LEAK_TOLERANCE = 1e-6
_MAX_EXTENSIONS = 12
# transition matrices kept between the forward and backward passes
_TRANSITION_CACHE_BYTES = 1 << 30


@dataclass(frozen=True, eq=False)
class DiscreteHMM:
    """An HMM on m grid points.

    For a discretized continuous model `edges` holds the m+1 cell boundaries; it is
    `None` when the grid is a genuinely finite state space.
    """

    grid: FloatArray
    log_prior: FloatArray
    log_emit: FloatArray
    transition: Callable[[int], FloatArray]
    """Row-stochastic m×m matrix P(X_t = grid[j] | X_{t-1} = grid[i]) for t >= 1."""
    edges: FloatArray | None = None

    @property
    def m(self) -> int:
        return self.grid.size

    @property
    def T(self) -> int:
        return self.log_emit.shape[0] - 1

    def log_trans(self, t: int) -> FloatArray:
        with np.errstate(divide="ignore"):
            return np.log(self.transition(t))

    @classmethod
    def from_finite_model(cls, model: ModelSpec, obs: ObservationSeq) -> DiscreteHMM:
        if model.support is None:
            raise UnsupportedModelError(f"model {model.name!r} has no finite support")
        check_observations(model, obs)
        support = model.support
        with np.errstate(divide="ignore"):
            log_prior = np.asarray(model.log_prior(support), dtype=float)
            log_emit = np.stack([model.log_emit(t, support, obs[t]) for t in range(len(obs))])

        @cache
        def transition(t: int) -> FloatArray:
            return np.exp(model.log_trans(t, support[:, None], support[None, :]))

        return cls(support, log_prior, log_emit, transition)


def _leak(model: ModelSpec, lo: float, hi: float, centers: FloatArray) -> float:
    """Largest probability mass that the prior or any transition row puts outside [lo, hi]."""
    g = model.gaussian
    assert g is not None
    leaks = [1 - (ndtr((hi - g.prior_mean) / g.prior_std) - ndtr((lo - g.prior_mean) / g.prior_std))]
    steps = range(1, 2) if g.time_homogeneous else range(1, model.T + 1)
    for t in steps:
        mu = np.asarray(g.drift(t, centers), dtype=float)
        inside = ndtr((hi - mu) / g.trans_std) - ndtr((lo - mu) / g.trans_std)
        leaks.append(float((1 - inside).max()))
    return max(leaks)


def discretize(
    model: ModelSpec,
    obs: ObservationSeq,
    m: int = 2000,
    bounds: tuple[float, float] = (-30.0, 30.0),
    auto_extend: bool = True,
) -> DiscreteHMM:
    """Discretize a model with additive Gaussian noise onto m uniform cells over `bounds`.

    Cell probabilities come from Gaussian CDF differences at the cell edges, emissions
    are evaluated at the cell centres. If the prior or a transition row leaks more than
    1e-6 of its mass outside the range, the range is widened by half its width on each
    side until it does not (or a warning is emitted when `auto_extend` is off).
    """
    if model.support is not None:
        return DiscreteHMM.from_finite_model(model, obs)
    g = model.gaussian
    if g is None:
        raise UnsupportedModelError(f"model {model.name!r} has no Gaussian structure to discretize")
    if m < 16:
        raise ValueError(f"the oracle grid needs at least 16 cells, got {m}")
    lo, hi = bounds
    if not lo < hi:
        raise ValueError(f"empty oracle range ({lo}, {hi})")
    check_observations(model, obs)

    for _ in range(_MAX_EXTENSIONS):
        edges = np.linspace(lo, hi, m + 1)
        centers = (edges[:-1] + edges[1:]) / 2
        leak = _leak(model, lo, hi, centers)
        if leak <= LEAK_TOLERANCE:
            break
        half = (hi - lo) / 2
        if not auto_extend:
            logger.warning(
                f"oracle range ({lo:.6g}, {hi:.6g}) leaks {leak:.3g} of the mass, "
                f"consider ({lo - half:.6g}, {hi + half:.6g})"
            )
            break
        logger.warning(f"oracle range ({lo:.6g}, {hi:.6g}) leaks {leak:.3g}, extending it")
        lo, hi = lo - half, hi + half
    else:
        logger.warning(f"oracle range still leaks {leak:.3g} after {_MAX_EXTENSIONS} extensions")

    prior = np.diff(ndtr((edges - g.prior_mean) / g.prior_std))
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior / prior.sum())
        log_emit = np.stack([model.log_emit(t, centers, obs[t]) for t in range(len(obs))])

    def build(t: int) -> FloatArray:
        mu = np.asarray(g.drift(t, centers), dtype=float)
        mass = np.diff(ndtr((edges[None, :] - mu[:, None]) / g.trans_std), axis=1)
        rows = mass.sum(axis=1, keepdims=True)
        return np.divide(mass, rows, out=np.full_like(mass, 1.0 / m), where=rows > 0)

    kept = max(1, _TRANSITION_CACHE_BYTES // (8 * m * m))
    transition: Callable[[int], FloatArray] = lru_cache(maxsize=kept)(build)
    if g.time_homogeneous:
        shared = cache(build)
        transition = lambda t: shared(1)  # noqa: E731
    logger.debug(f"oracle grid: {m} cells over ({lo:.6g}, {hi:.6g})")
    return DiscreteHMM(centers, log_prior, log_emit, transition, edges)


@dataclass(frozen=True, eq=False)
class OracleSolution:
    grid: FloatArray
    filtering: FloatArray
    smoothing: FloatArray
    log_likelihood_forward: float
    log_likelihood_backward: float
    edges: FloatArray | None = None

    @property
    def T(self) -> int:
        return self.smoothing.shape[0] - 1

    def means(self) -> FloatArray:
        return self.smoothing @ self.grid

    def variances(self) -> FloatArray:
        means = self.means()
        return np.einsum("tm,tm->t", self.smoothing, (self.grid[None, :] - means[:, None]) ** 2)

    def _cdf(self, pmf: FloatArray, x: NDArray) -> FloatArray:
        cum = np.cumsum(pmf)
        cum /= cum[-1]
        if self.edges is None:
            idx = np.searchsorted(self.grid, x, side="right")
            return np.concatenate([[0.0], cum])[idx]
        return np.interp(x, self.edges, np.concatenate([[0.0], cum]))

    def smoothing_cdf(self, t: int) -> Callable[[NDArray], FloatArray]:
        pmf = self.smoothing[t]
        return lambda x: self._cdf(pmf, np.asarray(x, dtype=float))

    def filtering_cdf(self, t: int) -> Callable[[NDArray], FloatArray]:
        pmf = self.filtering[t]
        return lambda x: self._cdf(pmf, np.asarray(x, dtype=float))

    def dump(self) -> str:
        lines = ["t\tmean\tvar"]
        lines.extend(f"{t}\t{m:.10g}\t{v:.10g}" for t, (m, v) in enumerate(zip(self.means(), self.variances())))
        return "\n".join(lines) + "\n"


def forward_backward(dhmm: DiscreteHMM) -> OracleSolution:
    """Scaled forward and backward passes; both yield the log-likelihood independently."""
    T, m = dhmm.T, dhmm.m
    top = dhmm.log_emit.max(axis=1)
    silent = np.flatnonzero(~np.isfinite(top))
    if silent.size:
        raise ImpossibleObservationError(int(silent[0]))
    emit = np.exp(dhmm.log_emit - top[:, None])
    prior = np.exp(dhmm.log_prior)

    filtering = np.empty((T + 1, m))
    log_forward = float(top.sum())
    alpha = prior
    for t in range(T + 1):
        if t:
            alpha = filtering[t - 1] @ dhmm.transition(t)
        alpha = alpha * emit[t]
        total = alpha.sum()
        if not total > 0:
            raise ImpossibleObservationError(t)
        filtering[t] = alpha / total
        log_forward += float(np.log(total))

    backward = np.empty((T + 1, m))
    backward[T] = 1.0 / m
    log_backward = float(top.sum()) + float(np.log(m))
    for t in range(T - 1, -1, -1):
        beta = dhmm.transition(t + 1) @ (emit[t + 1] * backward[t + 1])
        total = beta.sum()
        if not total > 0:
            raise ImpossibleObservationError(t + 1)
        backward[t] = beta / total
        log_backward += float(np.log(total))
    start = float(np.dot(prior * emit[0], backward[0]))
    if not start > 0:
        raise ImpossibleObservationError(0)
    log_backward += float(np.log(start))

    smoothing = filtering * backward
    smoothing /= smoothing.sum(axis=1, keepdims=True)
    return OracleSolution(dhmm.grid, filtering, smoothing, log_forward, log_backward, dhmm.edges)
