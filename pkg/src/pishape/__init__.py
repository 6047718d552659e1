"""Performance index shaping for closed-loop optimal control.

Start from a solved infinite-horizon problem (value ``phi0``), add a
parameterized state cost, obtain the new optimal law in closed form through
a precomputed linear map, and tune the parameters by gradient descent on
trajectory-level objectives.
"""
from .config import RunConfig, load_config
from .domain import Box
from .dynamics import CartPole, ControlAffineSystem, LtiSystem, linearize, third_order_lti
from .errors import (AssumptionWarning, DivergenceError, InvalidArgumentError,
                     NonNegativityWarning, NumericOverflowError, RankDeficiencyError,
                     SolverError)
from .nominal import (ControlWeight, PolynomialValue, QuadraticValue, StateCost,
                      fit_nominal_policy_iteration, hjb_residual, optimal_control, solve_care)
from .objective import OvershootPenalty, aggregate_objective, evaluate_objective
from .polybasis import EvenPolyBasis, enumerate_even_monomials, eval_basis
from .shaping import (ShapedValue, ShapingProblem, ShapingSolution, effective_added_cost,
                      shaped_control, shaped_controller, solve_shaping,
                      theorem1_identity_residual)
from .simulate import Trajectory, rollout, rollout_batch
from .tuning import (BoxSampler, TuningConfig, finite_difference_gradient, gradient_descent,
                     total_gradient)
from .verify import StabilityReport, gain_scaling_check, iss_check, lyapunov_decrease_check

__version__ = "0.1.0"
