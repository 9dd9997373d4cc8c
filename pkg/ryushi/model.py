"""Hidden Markov models as density/sampler callbacks.

All callbacks are vectorised: state arguments are numpy arrays (one entry per particle)
and broadcast against each other. Densities are always returned in log space.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

FloatArray = NDArray[np.float64]

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def normal_logpdf(x: ArrayLike, mean: ArrayLike, std: float) -> FloatArray:
    z = (np.asarray(x, dtype=float) - mean) / std
    return -0.5 * z * z - math.log(std) - _LOG_SQRT_2PI


@dataclass(frozen=True)
class GaussianStructure:
    """Additive Gaussian prior and transition: X0 ~ N(m, s²), X_t = g(t, X_{t-1}) + N(0, q²)."""

    prior_mean: float
    prior_std: float
    drift: Callable[[int, FloatArray], FloatArray]
    trans_std: float
    time_homogeneous: bool = True


@dataclass(frozen=True)
class LinearGaussianParams:
    """X_t = a X_{t-1} + N(0, q), Y_t = c X_t + N(0, r), X0 ~ N(m0, p0). q, r, p0 are variances."""

    a: float = 0.8
    q: float = 1.0
    c: float = 1.0
    r: float = 1.0
    m0: float = 0.0
    p0: float = 1.0


@dataclass(frozen=True, eq=False)
class ModelSpec:
    T: int
    log_prior: Callable[[FloatArray], FloatArray]
    sample_prior: Callable[[np.random.Generator, int], FloatArray]
    log_trans: Callable[[int, FloatArray, FloatArray], FloatArray]
    sample_trans: Callable[[int, FloatArray, np.random.Generator], FloatArray]
    log_emit: Callable[[int, FloatArray, float], FloatArray]
    sample_emit: Callable[[int, FloatArray, np.random.Generator], FloatArray]
    name: str = "custom"
    state_dim: int = 1
    gaussian: GaussianStructure | None = None
    linear: LinearGaussianParams | None = None
    support: FloatArray | None = None
    """Finite state space, `None` for real-valued states."""
    search_range: tuple[float, float] = (-100.0, 100.0)
    """Where the TPS-L leaf sampler looks for the emission's high-density region."""

    def __post_init__(self) -> None:
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")
        if self.state_dim != 1:
            raise ValueError("only univariate states are supported")

    @property
    def is_finite(self) -> bool:
        return self.support is not None


@dataclass(frozen=True, eq=False)
class ObservationSeq:
    y: FloatArray

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1:
            raise ValueError(f"observations must be a vector, got shape {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("observations must all be finite")
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, t: int) -> float:
        return float(self.y[t])

    @property
    def T(self) -> int:
        return len(self.y) - 1


def check_observations(model: ModelSpec, obs: ObservationSeq) -> None:
    if len(obs) != model.T + 1:
        raise ValueError(f"model {model.name!r} expects {model.T + 1} observations, got {len(obs)}")


def linear_gaussian_model(T: int, params: LinearGaussianParams | None = None) -> ModelSpec:
    """X0 ~ N(0,1), X_t = 0.8 X_{t-1} + V_t, Y_t = X_t + W_t with unit noise variances."""
    p = params or LinearGaussianParams()
    q_std, r_std, p0_std = math.sqrt(p.q), math.sqrt(p.r), math.sqrt(p.p0)

    def drift(t: int, x: FloatArray) -> FloatArray:
        return p.a * np.asarray(x, dtype=float)

    return ModelSpec(
        T=T,
        log_prior=lambda x: normal_logpdf(x, p.m0, p0_std),
        sample_prior=lambda rng, size: rng.normal(p.m0, p0_std, size),
        log_trans=lambda t, x_prev, x: normal_logpdf(x, p.a * np.asarray(x_prev), q_std),
        sample_trans=lambda t, x_prev, rng: p.a * x_prev + rng.normal(0.0, q_std, np.shape(x_prev)),
        log_emit=lambda t, x, y: normal_logpdf(y, p.c * np.asarray(x), r_std),
        sample_emit=lambda t, x, rng: p.c * x + rng.normal(0.0, r_std, np.shape(x)),
        name="linear",
        gaussian=GaussianStructure(p.m0, p0_std, drift, q_std, time_homogeneous=True),
        linear=p,
        search_range=(-50.0, 50.0),
    )


def benchmark_drift(t: int, x: FloatArray) -> FloatArray:
    x = np.asarray(x, dtype=float)
    return x / 2 + 25 * x / (1 + x * x) + 8 * math.cos(1.2 * t)


def nonlinear_benchmark_model(T: int, tau: float = 1.0, sigma: float = 1.0) -> ModelSpec:
    """X_t = X_{t-1}/2 + 25 X_{t-1}/(1+X_{t-1}²) + 8 cos(1.2t) + N(0,τ²), Y_t = X_t²/20 + N(0,σ²)."""
    if tau <= 0 or sigma <= 0:
        raise ValueError(f"tau and sigma must be positive, got tau={tau}, sigma={sigma}")

    return ModelSpec(
        T=T,
        log_prior=lambda x: normal_logpdf(x, 0.0, 1.0),
        sample_prior=lambda rng, size: rng.normal(0.0, 1.0, size),
        log_trans=lambda t, x_prev, x: normal_logpdf(x, benchmark_drift(t, x_prev), tau),
        sample_trans=lambda t, x_prev, rng: benchmark_drift(t, x_prev)
        + rng.normal(0.0, tau, np.shape(x_prev)),
        log_emit=lambda t, x, y: normal_logpdf(y, np.square(x) / 20, sigma),
        sample_emit=lambda t, x, rng: np.square(x) / 20 + rng.normal(0.0, sigma, np.shape(x)),
        name="nonlinear",
        gaussian=GaussianStructure(0.0, 1.0, benchmark_drift, tau, time_homogeneous=False),
        search_range=(-120.0, 120.0),
    )


def finite_state_model(
    T: int, prior: ArrayLike, transition: ArrayLike, emission: ArrayLike
) -> ModelSpec:
    """A finite HMM whose states are the floats 0, 1, ..., k-1.

    Args:
        prior (ArrayLike): initial pmf, length k.
        transition (ArrayLike): k×k row-stochastic matrix.
        emission (ArrayLike): k×s matrix, row i is the pmf of the observed symbol in state i.
    """
    pi = np.asarray(prior, dtype=float)
    trans = np.asarray(transition, dtype=float)
    emit = np.asarray(emission, dtype=float)
    k = len(pi)
    if trans.shape != (k, k) or emit.shape[0] != k:
        raise ValueError(f"inconsistent shapes: prior {pi.shape}, transition {trans.shape}, emission {emit.shape}")
    for name, rows in (("prior", pi[None, :]), ("transition", trans), ("emission", emit)):
        if not np.allclose(rows.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError(f"{name} rows must sum to 1")
    with np.errstate(divide="ignore"):
        log_pi, log_trans, log_emit = np.log(pi), np.log(trans), np.log(emit)
    cum_pi, cum_trans, cum_emit = np.cumsum(pi), np.cumsum(trans, axis=1), np.cumsum(emit, axis=1)

    def index(x: ArrayLike) -> NDArray[np.intp]:
        return np.asarray(x).astype(np.intp)

    def draw(cum_rows: FloatArray, rng: np.random.Generator) -> FloatArray:
        u = rng.random(cum_rows.shape[0])
        picked = (cum_rows < u[:, None]).sum(axis=1)
        return np.minimum(picked, cum_rows.shape[1] - 1).astype(float)

    return ModelSpec(
        T=T,
        log_prior=lambda x: log_pi[index(x)],
        sample_prior=lambda rng, size: draw(np.broadcast_to(cum_pi, (size, k)), rng),
        log_trans=lambda t, x_prev, x: log_trans[index(x_prev), index(x)],
        sample_trans=lambda t, x_prev, rng: draw(cum_trans[index(x_prev)], rng),
        log_emit=lambda t, x, y: log_emit[index(x), int(y)],
        sample_emit=lambda t, x, rng: draw(cum_emit[index(x)], rng),
        name="finite",
        support=np.arange(k, dtype=float),
    )


def simulate(
    model: ModelSpec, rng: np.random.Generator, noise_free: bool = False
) -> tuple[FloatArray, ObservationSeq]:
    """Draw a state trajectory and its observations.

    With `noise_free` the transition noise is switched off (X_t = g(t, X_{t-1})); this
    needs a model with Gaussian structure.
    """
    if noise_free and model.gaussian is None:
        raise ValueError(f"model {model.name!r} has no drift to run noise-free")
    states = np.empty(model.T + 1)
    obs = np.empty(model.T + 1)
    x = model.sample_prior(rng, 1)
    for t in range(model.T + 1):
        if t:
            if noise_free:
                assert model.gaussian is not None
                x = np.asarray(model.gaussian.drift(t, x), dtype=float)
            else:
                x = model.sample_trans(t, x, rng)
        states[t] = x[0]
        obs[t] = model.sample_emit(t, x, rng)[0]
    return states, ObservationSeq(obs)
