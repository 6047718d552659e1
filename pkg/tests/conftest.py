import warnings

import numpy as np
import pytest
from hypothesis import settings

from pishape import (Box, CartPole, ControlWeight, LtiSystem, QuadraticValue, ShapingProblem,
                     StateCost, enumerate_even_monomials, fit_nominal_policy_iteration,
                     solve_care, solve_shaping, third_order_lti)

settings.register_profile("pishape", deadline=None, max_examples=40)
settings.load_profile("pishape")

LTI_DOMAIN = Box.symmetric([5.0, 7.0, 5.0])
CARTPOLE_DOMAIN = Box.symmetric([5.0, 0.6, 2.5, 2.5])
CARTPOLE_TEST_X0 = np.array([4.6, 0.04, 0.9, 0.1])
CARTPOLE_TRAIN_BOX = Box([-5, -0.1, -1, -0.1], [5, 0.1, 1, 0.1])


@pytest.fixture(scope="session")
def lti():
    return third_order_lti()


@pytest.fixture(scope="session")
def weight1():
    return ControlWeight(np.eye(1))


@pytest.fixture(scope="session")
def lti_phi0(lti, weight1):
    return solve_care(lti.A, lti.B, StateCost(np.eye(3)), weight1)


@pytest.fixture(scope="session")
def lti_solution(lti, weight1, lti_phi0):
    b = enumerate_even_monomials(3, 4)
    prob = ShapingProblem(lti, weight1, lti_phi0, b, b, LTI_DOMAIN, K=2000,
                          cost=StateCost(np.eye(3)))
    return solve_shaping(prob)


@pytest.fixture(scope="session")
def cartpole():
    return CartPole()


@pytest.fixture(scope="session")
def cartpole_phi0(cartpole, weight1):
    return fit_nominal_policy_iteration(cartpole, StateCost(np.eye(4)), weight1,
                                        enumerate_even_monomials(4, 4), CARTPOLE_DOMAIN, K=2000)


@pytest.fixture(scope="session")
def cartpole_solution(cartpole, weight1, cartpole_phi0):
    b = enumerate_even_monomials(4, 4, scale=CARTPOLE_DOMAIN.half_widths)
    prob = ShapingProblem(cartpole, weight1, cartpole_phi0, b, b, CARTPOLE_DOMAIN, K=2000,
                          cost=StateCost(np.eye(4)))
    return solve_shaping(prob)


def scalar_toy(K=50):
    """xdot = -x + u with phi0 = 0 and R = 1, so the nominal closed loop is xdot = -x."""
    sys = LtiSystem([[-1.0]], [[1.0]], name="toy")
    w = ControlWeight(np.eye(1))
    phi0 = QuadraticValue(np.zeros((1, 1)))
    b = enumerate_even_monomials(1, 2)
    prob = ShapingProblem(sys, w, phi0, b, b, Box.symmetric([2.0]), K=K,
                          cost=StateCost(np.zeros((1, 1))))
    return prob


@pytest.fixture
def toy_solution():
    return solve_shaping(scalar_toy())


@pytest.fixture(autouse=True)
def _quiet_nonnegativity():
    from pishape import NonNegativityWarning
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonNegativityWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
