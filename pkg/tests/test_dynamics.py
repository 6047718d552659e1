import numpy as np
import pytest

from pishape import AssumptionWarning, CartPole, InvalidArgumentError, LtiSystem, linearize
from pishape.dynamics import evaluate, fd_jacobian_check, third_order_lti


def test_lti_matrices():
    s = third_order_lti()
    np.testing.assert_array_equal(s.A, [[0, 1, 0], [-4, -0.4, 1], [0, 1, -1]])
    np.testing.assert_array_equal(s.B, [[0], [1], [0]])


def test_lti_rate():
    s = third_order_lti()
    np.testing.assert_allclose(evaluate(s, [-5, 0, 0], [0.0]), [0, 20, 0])


def test_cartpole_rest():
    cp = CartPole()
    np.testing.assert_array_equal(evaluate(cp, np.zeros(4), [0.0]), np.zeros(4))


def test_cartpole_unit_force():
    cp = CartPole()
    np.testing.assert_allclose(evaluate(cp, np.zeros(4), [1.0]),
                               [0, 0, 1 / cp.m_c, 1 / (cp.l * cp.m_c)])


def test_dimension_errors():
    s = third_order_lti()
    with pytest.raises(InvalidArgumentError):
        evaluate(s, np.zeros(2), [0.0])
    with pytest.raises(InvalidArgumentError):
        evaluate(s, np.zeros(3), [0.0, 1.0])


def test_linearize_lti_exact():
    s = third_order_lti()
    lin = linearize(s, np.eye(3))
    np.testing.assert_array_equal(lin.A, s.A)
    np.testing.assert_array_equal(lin.B, s.B)
    assert lin.controllability_rank == 3 and lin.observability_rank == 3


def test_linearize_cartpole():
    cp = CartPole()
    lin = linearize(cp)
    np.testing.assert_allclose(lin.B[:, 0], [0, 0, 1 / cp.m_c, 1 / (cp.l * cp.m_c)])
    assert lin.A[3, 1] == pytest.approx(-(cp.m_c + cp.m_p) * cp.grav / (cp.l * cp.m_c))
    assert lin.controllability_rank == 4


def test_uncontrollable_warns():
    s = LtiSystem(np.diag([-1.0, -2.0]), [[1.0], [0.0]])
    with pytest.warns(AssumptionWarning):
        lin = linearize(s)
    assert lin.controllability_rank == 1


@pytest.mark.parametrize("system", [third_order_lti(), CartPole(), CartPole(2.0, 0.5, 1.0, 9.81)])
def test_jacobians_match_fd(system):
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.uniform(-2, 2, system.n)
        ef, eg = fd_jacobian_check(system, x)
        assert ef < 1e-5 and eg < 1e-5


@pytest.mark.parametrize("system", [third_order_lti(), CartPole()])
def test_origin_equilibrium(system):
    assert np.abs(system.f(np.zeros(system.n))).max() == 0.0


def test_cartpole_denominator_positive():
    cp = CartPole()
    xi = np.linspace(-np.pi, np.pi, 101)
    X = np.zeros((101, 4))
    X[:, 1] = xi
    assert np.all(cp.g(X)[:, 2, 0] > 0)


def test_bad_cartpole_params():
    with pytest.raises(InvalidArgumentError):
        CartPole(m_c=0.0)
