import itertools
import os

import numpy as np
import pytest
from scipy.special import logsumexp

from ryushi.density import DiscreteDensity
from ryushi.model import ModelSpec, ObservationSeq, finite_state_model, linear_gaussian_model, simulate

TOY_PRIOR = [0.6, 0.4]
TOY_TRANSITION = [[0.7, 0.3], [0.2, 0.8]]
TOY_EMISSION = [[0.9, 0.1], [0.25, 0.75]]
TOY_SYMBOLS = [0, 1, 1, 0, 1, 1, 0, 0]

slow = pytest.mark.skipif(not os.environ.get("RYUSHI_SLOW"), reason="set RYUSHI_SLOW=1 for full-scale runs")


def toy_model(T: int = 3) -> tuple[ModelSpec, ObservationSeq]:
    """A two-state HMM small enough to enumerate every path."""
    model = finite_state_model(T, TOY_PRIOR, TOY_TRANSITION, TOY_EMISSION)
    return model, ObservationSeq(np.array(TOY_SYMBOLS[: T + 1], dtype=float))


def linear_setup(T: int, seed: int = 7) -> tuple[ModelSpec, ObservationSeq]:
    model = linear_gaussian_model(T)
    _, obs = simulate(model, np.random.default_rng(seed))
    return model, obs


def path_log_target(model: ModelSpec, obs: ObservationSeq, paths: np.ndarray) -> np.ndarray:
    """log p0(x0) p(y0|x0) prod p(x_t|x_{t-1}) p(y_t|x_t) for every row of `paths`."""
    log_p = model.log_prior(paths[:, 0]) + model.log_emit(0, paths[:, 0], obs[0])
    for t in range(1, model.T + 1):
        log_p = log_p + model.log_trans(t, paths[:, t - 1], paths[:, t]) + model.log_emit(t, paths[:, t], obs[t])
    return log_p


def enumerate_posterior(model: ModelSpec, obs: ObservationSeq) -> tuple[np.ndarray, np.ndarray, float]:
    """Every state path, its posterior probability and the exact log-likelihood."""
    assert model.support is not None
    paths = np.array(list(itertools.product(model.support, repeat=model.T + 1)))
    log_p = path_log_target(model, obs, paths)
    log_z = float(logsumexp(log_p))
    return paths, np.exp(log_p - log_z), log_z


def exact_smoothing(model: ModelSpec, obs: ObservationSeq) -> np.ndarray:
    """(T+1) x k matrix of P(X_t = s | y_{0:T})."""
    paths, probs, _ = enumerate_posterior(model, obs)
    k = len(model.support)
    return np.array([[probs[paths[:, t] == s].sum() for s in range(k)] for t in range(model.T + 1)])


def exact_filtering(model: ModelSpec, obs: ObservationSeq) -> np.ndarray:
    rows = []
    for t in range(model.T + 1):
        prefix_model = finite_state_model(t, TOY_PRIOR, TOY_TRANSITION, TOY_EMISSION)
        prefix_obs = ObservationSeq(obs.y[: t + 1])
        rows.append(exact_smoothing(prefix_model, prefix_obs)[t])
    return np.array(rows)


def discrete_estimates(model: ModelSpec, pmfs: np.ndarray) -> tuple[DiscreteDensity, ...]:
    return tuple(DiscreteDensity(model.support, row) for row in pmfs)


def frequency(samples: np.ndarray, weights: np.ndarray, value: float) -> float:
    return float(weights[samples == value].sum())
