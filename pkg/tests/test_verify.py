import numpy as np
import pytest

from pishape import (InvalidArgumentError, OvershootPenalty, TuningConfig, gain_scaling_check,
                     gradient_descent, iss_check, lyapunov_decrease_check)
from pishape.verify import sinusoid_pulse

X0 = [-5.0, 0.0, 0.0]


@pytest.fixture(scope="module")
def tuned_theta(lti_solution):
    pen = OvershootPenalty(1, 2.0, 10.0, 0.01)
    cfg = TuningConfig([X0], 15.0, 0.01, gamma=0.25, max_iter=50, grad_tol=1e-3)
    return gradient_descent(lti_solution, pen, cfg).theta


def test_lyapunov_tuned(lti_solution, tuned_theta):
    rep = lyapunov_decrease_check(lti_solution, tuned_theta, X0, 15.0, 0.01)
    assert rep.max_lyapunov_increase < 1e-6
    assert rep.terminal_norm < 0.05
    assert rep.passed
    assert rep.envelope["x0"] == X0


def test_lyapunov_origin(lti_solution, tuned_theta):
    rep = lyapunov_decrease_check(lti_solution, tuned_theta, np.zeros(3), 5.0, 0.01)
    assert rep.max_lyapunov_increase == 0.0 and rep.sup_state_norm == 0.0


def test_theta_zero_matches_nominal_loop(lti_solution, lti, lti_phi0, weight1):
    from pishape import optimal_control, rollout
    rep = lyapunov_decrease_check(lti_solution, np.zeros(21), X0, 15.0, 0.01)
    nominal = rollout(lti, optimal_control(lti_phi0, lti, weight1), X0, 15.0, 0.01)
    assert np.abs(rep.trajectory.states - nominal.states).max() < 1e-10
    inc = np.diff(lti_phi0.value(nominal.states)).max()
    assert rep.max_lyapunov_increase == pytest.approx(inc, rel=1e-6, abs=1e-15)


def test_half_epsilon_is_base_check(lti_solution, tuned_theta):
    a = lyapunov_decrease_check(lti_solution, tuned_theta, X0, 15.0, 0.01)
    b = gain_scaling_check(lti_solution, tuned_theta, 0.5, X0, 15.0, 0.01)
    assert a.trajectory.states.tobytes() == b.trajectory.states.tobytes()
    assert a.max_lyapunov_increase == b.max_lyapunov_increase


@pytest.mark.parametrize("eps,tol", [(0.05, 0.1), (2.0, 0.05)])
def test_gain_scaling(lti_solution, tuned_theta, eps, tol):
    rep = gain_scaling_check(lti_solution, tuned_theta, eps, X0, 30.0, 0.01)
    assert rep.terminal_norm < tol
    assert rep.envelope["gain"] == pytest.approx(0.5 + eps)


def test_gain_scaling_validation(lti_solution):
    with pytest.raises(InvalidArgumentError):
        gain_scaling_check(lti_solution, np.zeros(21), 0.0, X0, 1.0, 0.01)


def test_iss_zero_disturbance_is_base(lti_solution, tuned_theta):
    a = lyapunov_decrease_check(lti_solution, tuned_theta, X0, 15.0, 0.01)
    b = iss_check(lti_solution, tuned_theta, None, X0, 15.0, 0.01)
    c = iss_check(lti_solution, tuned_theta, sinusoid_pulse(0.0), X0, 15.0, 0.01)
    assert a.trajectory.states.tobytes() == b.trajectory.states.tobytes()
    assert a.trajectory.states.tobytes() == c.trajectory.states.tobytes()


def test_iss_bounded_and_recovers(lti_solution, tuned_theta):
    rep = iss_check(lti_solution, tuned_theta, sinusoid_pulse(0.5), X0, 50.0, 0.01, t_off=25.0)
    assert rep.sup_state_norm < 100 and rep.terminal_norm < 0.05
    assert rep.passed


def test_iss_gain_monotone(lti_solution, tuned_theta):
    # start at rest so the sup-norm is set by the disturbance alone
    reps = [iss_check(lti_solution, tuned_theta, sinusoid_pulse(a), np.zeros(3), 50.0, 0.01,
                      t_off=25.0) for a in (0.5, 1.0)]
    assert np.isfinite(reps[1].sup_state_norm)
    assert reps[1].sup_state_norm > reps[0].sup_state_norm > 0


def test_iss_disturbance_switched_off(lti_solution):
    rep = iss_check(lti_solution, np.zeros(21), sinusoid_pulse(0.5), np.zeros(3), 10.0, 0.01)
    assert rep.envelope["t_off"] == 5.0
    k = int(round(5.0 / 0.01))
    assert np.abs(rep.trajectory.states[k:]).max() > 0
    assert np.abs(rep.trajectory.states[:k]).max() > 0


def test_lyapunov_slack_shrinks_with_dt(lti_solution, tuned_theta):
    coarse = lyapunov_decrease_check(lti_solution, tuned_theta, X0, 15.0, 0.01)
    fine = lyapunov_decrease_check(lti_solution, tuned_theta, X0, 15.0, 0.001)
    assert max(fine.max_lyapunov_increase, 0) <= max(coarse.max_lyapunov_increase, 0) / 10


def test_divergent_report(lti_solution):
    th = np.full(21, -50.0)
    rep = lyapunov_decrease_check(lti_solution, th, X0, 15.0, 0.01)
    assert not rep.passed
    assert all(np.isfinite([rep.max_lyapunov_increase, rep.terminal_norm, rep.sup_state_norm]))
    assert "diverged_at" in rep.envelope
