import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pishape import InvalidArgumentError, OvershootPenalty, Trajectory, aggregate_objective
from pishape.objective import evaluate_objective, objective_state_gradient, softplus

LOG2 = np.log(2.0)


def traj_from(xc, dt=0.01, n=3, comp=1):
    X = np.zeros((len(xc), n))
    X[:, comp] = xc
    return Trajectory(dt, np.arange(len(xc)) * dt, X, np.zeros((len(xc), 1)))


def test_at_threshold_zero():
    pen = OvershootPenalty(1, 2.0, 10.0, 0.01)
    assert evaluate_objective(pen, traj_from(np.full(50, 2.0))) == 0.0


def test_far_below_limit():
    pen = OvershootPenalty(1, 2.0, 10.0, 0.01)
    T = 100
    L = evaluate_objective(pen, traj_from(np.full(T, -1e3)))
    assert L == pytest.approx(-T * 0.01 * LOG2 / 10.0, rel=1e-12)


def test_constant_exceedance():
    pen = OvershootPenalty(1, 2.0, 20.0, 0.01)
    terms = pen.terms(traj_from(np.full(5, 3.0)).states)
    np.testing.assert_allclose(terms, 0.01 * (1 - LOG2 / 20), atol=1e-8)


def test_softplus_overflow_safe():
    assert softplus(1e4) == 1e4
    assert softplus(-1e4) == 0.0
    pen = OvershootPenalty(1, 0.0, 1.0, 0.01)
    assert np.isfinite(evaluate_objective(pen, traj_from(np.array([1e4, -1e4]))))


def test_gradient_tails_and_midpoint():
    pen = OvershootPenalty(1, 2.0, 10.0, 0.01)
    G = objective_state_gradient(pen, traj_from(np.array([-100.0, 2.0])))
    assert G[0, 1] < 1e-300
    assert G[1, 1] == pytest.approx(0.005)
    assert not G[:, [0, 2]].any()


def test_gradient_fd():
    rng = np.random.default_rng(0)
    pen = OvershootPenalty(1, 0.5, 10.0, 0.01)
    tr = traj_from(rng.uniform(-0.5, 1.5, 30))
    G = objective_state_gradient(pen, tr)
    eps = 1e-5
    for k in range(30):
        # only point k moves, so difference that point alone (summing the
        # untouched terms would just add rounding noise)
        Xp, Xm = tr.states[k:k + 1].copy(), tr.states[k:k + 1].copy()
        Xp[0, 1] += eps
        Xm[0, 1] -= eps
        fd = (evaluate_objective(pen, Xp) - evaluate_objective(pen, Xm)) / (2 * eps)
        assert fd == pytest.approx(G[k, 1], rel=1e-6, abs=1e-12)


def test_aggregate_modes():
    pen = OvershootPenalty(1, 0.5, 10.0, 0.01)
    tr = traj_from(np.linspace(0, 1, 20))
    L = evaluate_objective(pen, tr)
    assert aggregate_objective(pen, [tr]) == L
    assert aggregate_objective(pen, [tr] * 4) == pytest.approx(4 * L)
    assert aggregate_objective(pen, [tr] * 4, mode="mean") == pytest.approx(L)
    with pytest.raises(InvalidArgumentError):
        aggregate_objective(pen, [tr], mode="median")
    with pytest.raises(InvalidArgumentError):
        aggregate_objective(pen, [])


def test_validation():
    with pytest.raises(InvalidArgumentError):
        OvershootPenalty(1, 0.0, beta=0.0)
    with pytest.raises(InvalidArgumentError):
        OvershootPenalty(1, 0.0, dt=-1.0)
    pen = OvershootPenalty(5, 0.0)
    with pytest.raises(InvalidArgumentError):
        evaluate_objective(pen, np.zeros((3, 3)))
    with pytest.raises(InvalidArgumentError):
        evaluate_objective(OvershootPenalty(1, 0.0, dt=0.02), traj_from(np.zeros(3)))


@given(arrays(float, 20, elements=st.floats(-5, 5)), st.integers(0, 19), st.floats(0, 1))
def test_monotone_in_penalized_component(xc, k, bump):
    pen = OvershootPenalty(1, 1.0, 10.0, 0.01)
    X = np.zeros((20, 3))
    X[:, 1] = xc
    Y = X.copy()
    Y[k, 1] += bump
    assert evaluate_objective(pen, Y) >= evaluate_objective(pen, X)


@given(arrays(float, (10, 3), elements=st.floats(-5, 5)), arrays(float, 10, elements=st.floats(-5, 5)))
def test_invariant_to_other_components(X, other):
    pen = OvershootPenalty(1, 1.0, 10.0, 0.01)
    Y = X.copy()
    Y[:, 0] = other
    Y[:, 2] = -other
    assert evaluate_objective(pen, Y) == evaluate_objective(pen, X)


@given(st.floats(-1e4, 1e4))
def test_overflow_property(a):
    pen = OvershootPenalty(0, 0.0, 1.0, 0.01)
    assert np.isfinite(evaluate_objective(pen, np.array([[a]])))
