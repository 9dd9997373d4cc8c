"""Reference smoothers: bootstrap particle filter, FFBSm, FFBSi and Kalman/RTS."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy.special import logsumexp

from .exceptions import DegenerateFilterError, DegenerateWeightsError, UnsupportedModelError
from .model import LinearGaussianParams, ModelSpec, ObservationSeq, check_observations, normal_logpdf
from .resampling import Scheme, normalize, resample, should_resample
from .tps import WeightedPath

FloatArray = NDArray[np.float64]
IndexArray = NDArray[np.intp]


def _moments(particles: FloatArray, weights: FloatArray) -> tuple[FloatArray, FloatArray]:
    means = np.einsum("tn,tn->t", weights, particles)
    variances = np.einsum("tn,tn->t", weights, (particles - means[:, None]) ** 2)
    return means, variances


@dataclass(frozen=True, eq=False)
class FilterOutput:
    """Weighted filter particles of every step, taken before that step's resampling.

    ``ancestors[t - 1, i]`` is the index at step t-1 of the parent of particle i at step t;
    it is only kept when the filter ran with ``keep_paths``.
    """

    particles: FloatArray
    weights: FloatArray
    log_likelihood: float
    ancestors: IndexArray | None = None

    @property
    def T(self) -> int:
        return self.particles.shape[0] - 1

    @property
    def N(self) -> int:
        return self.particles.shape[1]

    def means(self) -> FloatArray:
        return _moments(self.particles, self.weights)[0]

    def variances(self) -> FloatArray:
        return _moments(self.particles, self.weights)[1]

    def _lineage(self) -> IndexArray:
        if self.ancestors is None:
            raise ValueError("the filter did not keep its genealogy, rerun with keep_paths")
        lineage = np.empty((self.T + 1, self.N), dtype=np.intp)
        idx = np.arange(self.N)
        for t in range(self.T, -1, -1):
            lineage[t] = idx
            if t:
                idx = self.ancestors[t - 1, idx]
        return lineage

    def smoothing_path(self) -> WeightedPath:
        """Ancestral paths of the final particles with the final weights."""
        lineage = self._lineage()
        paths = np.take_along_axis(self.particles, lineage, axis=1).T
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights[-1])
        return WeightedPath((0, self.T), np.ascontiguousarray(paths), log_w, self.log_likelihood)

    def unique_ancestors(self, t: int) -> int:
        """Distinct step-t particles left in the genealogy of the final particles."""
        return int(np.unique(self._lineage()[t]).size)


@dataclass(frozen=True, eq=False)
class MarginalParticles:
    """Filter particles reweighted to the marginal smoothing distributions."""

    particles: FloatArray
    weights: FloatArray

    @property
    def T(self) -> int:
        return self.particles.shape[0] - 1

    def marginal(self, t: int) -> tuple[FloatArray, FloatArray]:
        return self.particles[t], self.weights[t]

    def means(self) -> FloatArray:
        return _moments(self.particles, self.weights)[0]

    def variances(self) -> FloatArray:
        return _moments(self.particles, self.weights)[1]


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: FloatArray
    var: FloatArray

    def __post_init__(self) -> None:
        if (np.asarray(self.var) <= 0).any():
            raise ValueError("Gaussian beliefs need positive variances")


def bootstrap_pf(
    model: ModelSpec,
    obs: ObservationSeq,
    N: int,
    keep_paths: bool = False,
    scheme: Scheme | str = Scheme.SYSTEMATIC,
    rng: np.random.Generator | None = None,
    ess_threshold: float | None = None,
) -> FilterOutput:
    """Bootstrap particle filter: transition as proposal, emission as weight.

    With ``keep_paths`` the genealogy is stored so that `FilterOutput.smoothing_path`
    yields the path-space smoother.
    """
    if N < 2:
        raise ValueError(f"the particle filter needs N >= 2, got {N}")
    check_observations(model, obs)
    rng = rng or np.random.default_rng()
    scheme = Scheme(scheme)
    T = model.T
    particles = np.empty((T + 1, N))
    weights = np.empty((T + 1, N))
    ancestors = np.empty((T, N), dtype=np.intp) if keep_paths else None
    log_likelihood = 0.0

    x = np.asarray(model.sample_prior(rng, N), dtype=float)
    carried = np.full(N, -math.log(N))
    for t in range(T + 1):
        if t:
            if should_resample(weights[t - 1], ess_threshold):
                idx = resample(weights[t - 1], N, scheme, rng)
                carried = np.full(N, -math.log(N))
            else:
                idx = np.arange(N)
                with np.errstate(divide="ignore"):
                    carried = np.log(weights[t - 1])
            if ancestors is not None:
                ancestors[t - 1] = idx
            x = np.asarray(model.sample_trans(t, particles[t - 1, idx], rng), dtype=float)
        with np.errstate(divide="ignore"):
            log_w = carried + model.log_emit(t, x, obs[t])
        try:
            weights[t], _ = normalize(log_w)
        except DegenerateWeightsError as e:
            raise DegenerateFilterError(t) from e
        particles[t] = x
        log_likelihood += float(logsumexp(log_w) - logsumexp(carried))

    logger.debug(f"bootstrap filter with N={N} finished, log-likelihood {log_likelihood:.6g}")
    return FilterOutput(particles, weights, log_likelihood, ancestors)


def _log_weights(filter_out: FilterOutput) -> FloatArray:
    with np.errstate(divide="ignore"):
        return np.log(filter_out.weights)


def ffbsm(filter_out: FilterOutput, model: ModelSpec) -> MarginalParticles:
    """Forward filtering backward smoothing; O(N²) per step."""
    T = filter_out.T
    log_fw = _log_weights(filter_out)
    log_sw = np.empty_like(log_fw)
    log_sw[T] = log_fw[T]
    for t in range(T - 1, -1, -1):
        x_t, x_next = filter_out.particles[t], filter_out.particles[t + 1]
        with np.errstate(divide="ignore"):
            # trans[i, j] = log p(x_{t+1}^j | x_t^i)
            trans = np.asarray(model.log_trans(t + 1, x_t[:, None], x_next[None, :]), dtype=float)
        denom = logsumexp(log_fw[t][:, None] + trans, axis=0)
        if (np.isneginf(denom) & np.isfinite(log_sw[t + 1])).any():
            raise DegenerateFilterError(t, f"backward smoothing weights are undefined at step {t}")
        with np.errstate(invalid="ignore"):
            ratio = np.where(np.isfinite(log_sw[t + 1]), log_sw[t + 1] - denom, -np.inf)
        log_sw[t] = log_fw[t] + logsumexp(trans + ratio[None, :], axis=1)
        log_sw[t] -= logsumexp(log_sw[t])
    return MarginalParticles(filter_out.particles, np.exp(log_sw))


def _categorical_rows(log_p: FloatArray, rng: np.random.Generator) -> IndexArray:
    """One draw per row of an (unnormalized) log-probability matrix."""
    top = log_p.max(axis=1, keepdims=True)
    p = np.exp(log_p - top)
    cum = np.cumsum(p, axis=1)
    u = rng.random(log_p.shape[0]) * cum[:, -1]
    return np.minimum((cum <= u[:, None]).sum(axis=1), log_p.shape[1] - 1)


def ffbsi(
    filter_out: FilterOutput, model: ModelSpec, N_draws: int, rng: np.random.Generator | None = None
) -> WeightedPath:
    """Forward filtering backward simulation of `N_draws` equally weighted joint paths."""
    rng = rng or np.random.default_rng()
    T = filter_out.T
    log_fw = _log_weights(filter_out)
    paths = np.empty((N_draws, T + 1))
    idx = _categorical_rows(np.broadcast_to(log_fw[T], (N_draws, filter_out.N)), rng)
    paths[:, T] = filter_out.particles[T, idx]
    for t in range(T - 1, -1, -1):
        x_t = filter_out.particles[t]
        with np.errstate(divide="ignore"):
            log_p = log_fw[t][None, :] + model.log_trans(t + 1, x_t[None, :], paths[:, t + 1][:, None])
        if not np.isfinite(log_p.max(axis=1)).all():
            raise DegenerateFilterError(t, f"backward simulation has no admissible ancestor at step {t}")
        idx = _categorical_rows(log_p, rng)
        paths[:, t] = x_t[idx]
    return WeightedPath((0, T), paths, np.full(N_draws, -math.log(N_draws)), filter_out.log_likelihood)


def _linear_params(model: ModelSpec | LinearGaussianParams) -> LinearGaussianParams:
    if isinstance(model, LinearGaussianParams):
        return model
    if model.linear is None:
        raise UnsupportedModelError(f"model {model.name!r} is not linear Gaussian")
    return model.linear


def kalman_filter(
    model: ModelSpec | LinearGaussianParams, obs: ObservationSeq
) -> tuple[GaussianBelief, float]:
    """Filtering means/variances and the exact log-likelihood log p(y_{0:T})."""
    p = _linear_params(model)
    n = len(obs)
    mean, var = np.empty(n), np.empty(n)
    m_pred, p_pred = p.m0, p.p0
    log_likelihood = 0.0
    for t in range(n):
        if t:
            m_pred, p_pred = p.a * mean[t - 1], p.a * p.a * var[t - 1] + p.q
        s = p.c * p.c * p_pred + p.r
        gain = p_pred * p.c / s
        log_likelihood += float(normal_logpdf(obs[t], p.c * m_pred, math.sqrt(s)))
        mean[t] = m_pred + gain * (obs[t] - p.c * m_pred)
        var[t] = (1 - gain * p.c) * p_pred
    return GaussianBelief(mean, var), log_likelihood


def rts_smoother(model: ModelSpec | LinearGaussianParams, obs: ObservationSeq) -> GaussianBelief:
    p = _linear_params(model)
    filtered, _ = kalman_filter(p, obs)
    mean, var = filtered.mean.copy(), filtered.var.copy()
    for t in range(len(obs) - 2, -1, -1):
        m_pred = p.a * filtered.mean[t]
        p_pred = p.a * p.a * filtered.var[t] + p.q
        gain = filtered.var[t] * p.a / p_pred
        mean[t] = filtered.mean[t] + gain * (mean[t + 1] - m_pred)
        var[t] = filtered.var[t] + gain * gain * (var[t + 1] - p_pred)
    return GaussianBelief(mean, var)
