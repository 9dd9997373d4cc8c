import dataclasses

import numpy as np
import pytest
from helper import enumerate_posterior, exact_filtering, exact_smoothing, linear_setup, slow, toy_model
from loguru import logger

from ryushi.baselines import kalman_filter, rts_smoother
from ryushi.exceptions import ImpossibleObservationError, UnsupportedModelError
from ryushi.model import ObservationSeq, finite_state_model, nonlinear_benchmark_model, simulate
from ryushi.oracle import LEAK_TOLERANCE, DiscreteHMM, _leak, discretize, forward_backward


def test_finite_model_is_exact():
    model, obs = toy_model(7)
    dhmm = discretize(model, obs)
    assert dhmm.edges is None
    assert dhmm.m == 2
    solution = forward_backward(dhmm)
    assert np.allclose(solution.smoothing, exact_smoothing(model, obs), atol=1e-12)
    assert np.allclose(solution.filtering, exact_filtering(model, obs), atol=1e-12)
    _, _, log_z = enumerate_posterior(model, obs)
    assert solution.log_likelihood_forward == pytest.approx(log_z, abs=1e-10)
    assert solution.log_likelihood_backward == pytest.approx(log_z, abs=1e-10)


def test_finite_model_cdf_is_a_step():
    model, obs = toy_model(3)
    solution = forward_backward(DiscreteHMM.from_finite_model(model, obs))
    cdf = solution.smoothing_cdf(1)
    p0 = solution.smoothing[1, 0]
    assert np.allclose(cdf([-0.5, 0.0, 0.5, 1.0, 2.0]), [0, p0, p0, 1, 1])
    assert solution.filtering_cdf(3)(0.0) == pytest.approx(solution.filtering[3, 0])


def test_linear_model_matches_rts():
    model, obs = linear_setup(10)
    solution = forward_backward(discretize(model, obs, m=2000, bounds=(-15.0, 15.0)))
    truth = rts_smoother(model, obs)
    assert np.allclose(solution.means(), truth.mean, atol=1e-3)
    assert np.allclose(solution.variances(), truth.var, atol=1e-3)
    _, log_likelihood = kalman_filter(model, obs)
    assert solution.log_likelihood_forward == pytest.approx(solution.log_likelihood_backward, abs=1e-8)
    assert solution.log_likelihood_forward == pytest.approx(log_likelihood, abs=1e-3)


def test_piecewise_linear_cdf():
    model, obs = linear_setup(2)
    solution = forward_backward(discretize(model, obs, m=400, bounds=(-40.0, 40.0)))
    cdf = solution.smoothing_cdf(0)
    edges = solution.edges
    assert cdf(edges[0]) == 0
    assert cdf(edges[-1]) == pytest.approx(1.0)
    mid = (edges[200] + edges[201]) / 2
    assert cdf(mid) == pytest.approx((cdf(edges[200]) + cdf(edges[201])) / 2)


def test_auto_extension():
    model, obs = linear_setup(3)
    dhmm = discretize(model, obs, m=200, bounds=(-2.0, 2.0))
    assert (dhmm.edges[0], dhmm.edges[-1]) == (-32.0, 32.0)
    fixed = discretize(model, obs, m=200, bounds=(-2.0, 2.0), auto_extend=False)
    assert (fixed.edges[0], fixed.edges[-1]) == (-2.0, 2.0)


def test_auto_extension_nonlinear():
    model = nonlinear_benchmark_model(3, tau=5.0)
    _, obs = simulate(model, np.random.default_rng(1))
    dhmm = discretize(model, obs, m=300, bounds=(-30.0, 30.0))
    lo, hi = dhmm.edges[0], dhmm.edges[-1]
    assert lo < -30.0 and hi > 30.0
    assert _leak(model, lo, hi, dhmm.grid) <= LEAK_TOLERANCE


def test_leaking_range_warns():
    model = nonlinear_benchmark_model(3, tau=5.0)
    _, obs = simulate(model, np.random.default_rng(1))
    messages: list[str] = []
    handler = logger.add(messages.append, level="WARNING", format="{message}")
    try:
        fixed = discretize(model, obs, m=300, bounds=(-30.0, 30.0), auto_extend=False)
    finally:
        logger.remove(handler)
    assert (fixed.edges[0], fixed.edges[-1]) == (-30.0, 30.0)
    assert len(messages) == 1
    assert "leaks" in messages[0] and "consider (-60, 60)" in messages[0]


def test_transition_rows():
    model = nonlinear_benchmark_model(4)
    _, obs = simulate(model, np.random.default_rng(0))
    dhmm = discretize(model, obs, m=300, bounds=(-30.0, 30.0))
    first, second = dhmm.transition(1), dhmm.transition(2)
    assert first.shape == (300, 300)
    assert np.allclose(first.sum(axis=1), 1.0)
    assert not np.allclose(first, second)
    assert dhmm.transition(2) is second
    linear, linear_obs = linear_setup(4)
    homogeneous = discretize(linear, linear_obs, m=300, bounds=(-30.0, 30.0))
    assert homogeneous.transition(1) is homogeneous.transition(4)


def test_impossible_observation():
    model = finite_state_model(3, [0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]], [[1.0, 0.0], [1.0, 0.0]])
    obs = ObservationSeq(np.array([0.0, 0.0, 1.0, 0.0]))
    with pytest.raises(ImpossibleObservationError) as info:
        forward_backward(discretize(model, obs))
    assert info.value.step == 2


def test_unsupported_model():
    model, obs = linear_setup(2)
    bare = dataclasses.replace(model, gaussian=None, linear=None)
    with pytest.raises(UnsupportedModelError):
        discretize(bare, obs)
    with pytest.raises(UnsupportedModelError):
        DiscreteHMM.from_finite_model(model, obs)
    with pytest.raises(ValueError):
        discretize(model, obs, m=8)


def test_dump():
    model, obs = toy_model(3)
    lines = forward_backward(discretize(model, obs)).dump().splitlines()
    assert lines[0] == "t\tmean\tvar"
    assert len(lines) == 5
    assert [line.split("\t")[0] for line in lines[1:]] == ["0", "1", "2", "3"]


@slow
def test_grid_refinement():
    model, obs = linear_setup(5)
    coarse = forward_backward(discretize(model, obs, m=2000, bounds=(-30.0, 30.0)))
    fine = forward_backward(discretize(model, obs, m=4000, bounds=(-30.0, 30.0)))
    assert np.abs(coarse.means() - fine.means()).max() < 1e-3
