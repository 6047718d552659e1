"""Gradient tuning of the shaping parameters ``theta``.

The closed loop ``xdot = f(x) + g(x) u_p(x, theta)`` is integrated together
with its forward sensitivity ``S = dx/dtheta``:

    Sdot = [df/dx + sum_j dg_j/dx u_j + g du/dx] S + g du/dtheta,   S(0) = 0.

Both are advanced by the same RK4 stages, so ``S`` is the exact derivative of
the discrete rollout (up to rounding) and matches finite differences of the
rollout far more tightly than the integration error itself.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .domain import Box
from .errors import DivergenceError, InvalidArgumentError
from .objective import OvershootPenalty
from .shaping import ShapingSolution, check_nonnegativity, shaped_controller
from .simulate import (BLOWUP_BOUND, Trajectory, integrate_rk4, n_steps_for,
                       rollout_batch)

log = logging.getLogger(__name__)

__all__ = [
    "BoxSampler",
    "SensitivityTrajectory",
    "TuningConfig",
    "TuningTask",
    "control_sensitivity",
    "finite_difference_gradient",
    "gradient_descent",
    "propagate_sensitivity",
    "rollout_with_sensitivity",
    "total_gradient",
]


@dataclass(frozen=True)
class SensitivityTrajectory:
    """``S[k] = dx(t_k)/dtheta`` on the parent trajectory's grid, shape ``(T + 1, n, q)``."""

    dt: float
    times: np.ndarray
    S: np.ndarray


def control_sensitivity(solution: ShapingSolution, theta, x) -> np.ndarray:
    """``du_p/dtheta = -1/2 R^{-1} g(x)' grad psi_h(x) M``, shape ``(..., p, q)``.

    ``h`` is linear in ``theta``, so the result does not depend on ``theta``;
    the argument is kept for symmetry with the other evaluators.
    """
    solution.coefficients(theta)  # shape check only
    x = solution.system.check_state(x)
    GM = solution.basis_h.gradients(x) @ solution.M                  # (..., n, q)
    gT_GM = np.einsum("...ij,...iq->...jq", solution.system.g(x), GM)  # (..., p, q)
    return -0.5 * np.einsum("jl,...lq->...jq", solution.weight.R_inv, gT_GM)


class _ShapedLoop:
    """Closed-loop and sensitivity right-hand sides for one ``theta``.

    The ``h`` gradient, ``h`` Hessian and ``grad psi_h M`` are contracted
    with the basis derivative maps once, so each stage costs one monomial
    table plus a few small products.
    """

    def __init__(self, solution: ShapingSolution, theta, disturbance=None):
        self.sol = solution
        self.sys = solution.system
        c = solution.coefficients(theta)
        _, T1, T2 = solution.basis_h.derivative_maps()
        self.gmap = T1 @ c                                  # (m, n)
        self.hmap = T2 @ c                                  # (m, n, n)
        self.gMmap = T1 @ solution.M                        # (m, n, q)
        self.Rinv = solution.weight.R_inv
        self.n, self.q = self.sys.n, solution.q_dim
        self.disturbance = disturbance

    def control(self, x):
        grad = self.sol.phi0.gradient(x) + self.sol.basis_h.monomials(x) @ self.gmap
        return -0.5 * np.einsum("...ij,...i->...j", self.sys.g(x), grad) @ self.Rinv.T

    def augmented(self, t, y):
        n, q = self.n, self.q
        x = y[..., :n]
        S = y[..., n:].reshape(y.shape[:-1] + (n, q))
        sys, phi0 = self.sys, self.sol.phi0
        mono = self.sol.basis_h.monomials(x)
        g = sys.g(x)                                                    # (B, n, p)
        grad = phi0.gradient(x) + mono @ self.gmap                      # (B, n)
        hess = phi0.hessian(x) + np.tensordot(mono, self.hmap, axes=1)  # (B, n, n)
        GM = np.tensordot(mono, self.gMmap, axes=1)                     # (B, n, q)
        u = -0.5 * np.einsum("...ij,...i->...j", g, grad) @ self.Rinv.T  # (B, p)
        if self.disturbance is not None:
            u = u + np.asarray(self.disturbance(t), dtype=float)
        xdot = sys.f(x) + np.einsum("...ij,...j->...i", g, u)
        # du/dx[j, k] = -1/2 R^{-1}[j, l] (dg[i, k, l] grad_i + g[i, l] hess[i, k])
        inner = np.einsum("...il,...ik->...lk", g, hess)
        J = sys.df_dx(x)
        if not sys.constant_input_matrix:
            dg = sys.dg_dx(x)                                           # (B, n, n, p)
            inner = inner + np.einsum("...ikl,...i->...lk", dg, grad)
            J = J + np.einsum("...ikj,...j->...ik", dg, u)
        du_dx = -0.5 * np.einsum("jl,...lk->...jk", self.Rinv, inner)   # (B, p, n)
        gRg = -0.5 * g @ self.Rinv                                      # (B, n, p) = g du/d(g'.)
        J = J + gRg @ np.swapaxes(g, -1, -2) @ hess if sys.constant_input_matrix else \
            J + np.einsum("...ij,...jk->...ik", g, du_dx)
        Sdot = J @ S + gRg @ np.einsum("...il,...iq->...lq", g, GM)
        return np.concatenate([xdot, Sdot.reshape(y.shape[:-1] + (n * q,))], axis=-1)


def rollout_with_sensitivity(solution: ShapingSolution, theta, x0s, horizon: float, dt: float,
                             disturbance=None, blowup: float = BLOWUP_BOUND):
    """Joint state/sensitivity rollouts from a batch of initial conditions.

    Returns ``(trajectories, sensitivities)`` as two lists.
    """
    sys = solution.system
    x0s = np.atleast_2d(sys.check_state(x0s))
    loop = _ShapedLoop(solution, theta, disturbance)
    n, q = loop.n, loop.q
    steps = n_steps_for(horizon, dt)
    y0 = np.concatenate([x0s, np.zeros((len(x0s), n * q))], axis=1)
    try:
        Y = integrate_rk4(loop.augmented, y0, steps, dt, guard=lambda y: y[..., :n],
                          blowup=blowup)
    except DivergenceError as exc:
        if exc.index is not None:
            exc.args = (f"{exc.args[0]} (initial condition {x0s[exc.index].tolist()})",)
        raise
    times = np.arange(steps + 1) * dt
    X = Y[..., :n]
    S = Y[..., n:].reshape(Y.shape[:-1] + (n, q))
    U = loop.control(X)
    trajs = [Trajectory(dt, times, X[:, b].copy(), U[:, b].copy()) for b in range(len(x0s))]
    sens = [SensitivityTrajectory(dt, times, S[:, b].copy()) for b in range(len(x0s))]
    return trajs, sens


def propagate_sensitivity(system, solution: ShapingSolution, theta,
                          traj: Trajectory) -> SensitivityTrajectory:
    """Sensitivity of ``traj`` with respect to ``theta``.

    ``traj`` must come from the shaped closed loop with the same ``theta`` and
    step; the state is re-integrated jointly with ``S`` on the same grid and
    checked against ``traj``.
    """
    if system is not solution.system:
        raise InvalidArgumentError("system does not match the shaping solution")
    trajs, sens = rollout_with_sensitivity(solution, theta, traj.states[0],
                                           traj.n_steps * traj.dt, traj.dt)
    scale = max(1.0, float(np.abs(traj.states).max()))
    if np.abs(trajs[0].states - traj.states).max() > 1e-9 * scale:
        raise InvalidArgumentError("trajectory was not produced by this shaped closed loop")
    return sens[0]


# -- objective over a set of rollouts ---------------------------------------------

@dataclass(frozen=True)
class BoxSampler:
    """``count`` initial conditions drawn uniformly from ``box`` with ``seed``."""

    box: Box
    count: int
    seed: int = 0

    def sample(self) -> np.ndarray:
        return self.box.uniform(self.count, np.random.default_rng(self.seed))


@dataclass(frozen=True)
class TuningTask:
    """One shaping solution, one objective, and the initial conditions to roll out."""

    solution: ShapingSolution
    penalty: OvershootPenalty
    initial_conditions: np.ndarray
    horizon: float
    dt: float
    mode: str = "sum"
    blowup: float = BLOWUP_BOUND

    def __post_init__(self):
        ics = np.atleast_2d(np.asarray(self.initial_conditions, dtype=float))
        object.__setattr__(self, "initial_conditions", ics)
        if not np.isclose(self.penalty.dt, self.dt, rtol=1e-12, atol=0):
            raise InvalidArgumentError("penalty dt must equal the rollout dt")
        if self.mode not in ("sum", "mean"):
            raise InvalidArgumentError(f"unknown aggregation mode {self.mode!r}")

    @property
    def _scale(self):
        return 1.0 if self.mode == "sum" else 1.0 / len(self.initial_conditions)

    def rollouts(self, theta) -> list[Trajectory]:
        ctrl = shaped_controller(self.solution, theta)
        return rollout_batch(self.solution.system, ctrl, self.initial_conditions,
                             self.horizon, self.dt, blowup=self.blowup)

    def objective(self, theta) -> float:
        return self.objective_and_terminal(theta)[0]

    def objective_and_terminal(self, theta):
        """Objective and the largest terminal state norm over the rollouts."""
        X = np.stack([t.states for t in self.rollouts(theta)], axis=1)
        L = float(self.penalty.terms(X).sum()) * self._scale
        return L, float(np.linalg.norm(X[-1], axis=1).max())

    def objective_and_gradient(self, theta):
        trajs, sens = rollout_with_sensitivity(self.solution, theta, self.initial_conditions,
                                               self.horizon, self.dt, blowup=self.blowup)
        X = np.stack([t.states for t in trajs], axis=1)                 # (T+1, B, n)
        S = np.stack([s.S for s in sens], axis=1)                       # (T+1, B, n, q)
        c = self.penalty.component
        L = float(self.penalty.terms(X).sum()) * self._scale
        w = self.penalty.state_weights(X)                               # (T+1, B)
        grad = np.einsum("kb,kbq->q", w, S[:, :, c, :]) * self._scale
        return L, grad


def total_gradient(penalty: OvershootPenalty, solution: ShapingSolution, theta,
                   initial_conditions, horizon: float, dt: float, mode: str = "sum") -> np.ndarray:
    """``dL/dtheta`` summed over the grid and over initial conditions."""
    task = TuningTask(solution, penalty, initial_conditions, horizon, dt, mode)
    return task.objective_and_gradient(theta)[1]


def finite_difference_gradient(fun: Callable[[np.ndarray], float], theta,
                               eps: float = 1e-5) -> np.ndarray:
    """Central differences of ``fun`` at ``theta``; ``2 len(theta)`` evaluations."""
    if not eps > 0:
        raise InvalidArgumentError(f"eps must be positive, got {eps}")
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = eps
        grad[j] = (fun(theta + e) - fun(theta - e)) / (2.0 * eps)
    return grad


# -- descent loop ---------------------------------------------------------------------

STEP_RULES = ("fixed", "normalized", "backtracking")


@dataclass(frozen=True)
class TuningConfig:
    """Settings of the descent loop.

    ``initial_conditions`` is either an ``(k, n)`` array or a :class:`BoxSampler`.
    ``gamma`` is the learning rate for ``step="fixed"`` and the (maximum) step
    length along the normalized gradient for the other two rules.
    ``terminal_tol``, when set, makes the backtracking search reject trial
    points whose rollouts end farther than this from the origin.  The
    overshoot objective alone does not see a loop that has stopped converging.
    The loop stops with reason ``"step_tol"`` once an accepted step is
    shorter than ``step_tol``.
    """

    initial_conditions: object
    horizon: float
    dt: float
    gamma: float = 1.0
    max_iter: int = 100
    grad_tol: float = 1e-8
    step: str = "backtracking"
    mode: str = "sum"
    armijo_c: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 30
    check_points: int = 1000
    terminal_tol: float | None = None
    step_tol: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidArgumentError("gamma must be positive")
        if self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be at least 1")
        if self.step not in STEP_RULES:
            raise InvalidArgumentError(f"step must be one of {STEP_RULES}, got {self.step!r}")
        if not self.step_tol >= 0:
            raise InvalidArgumentError("step_tol must be non-negative")
        if self.terminal_tol is not None and not self.terminal_tol > 0:
            raise InvalidArgumentError("terminal_tol must be positive")

    def resolve_initial_conditions(self) -> np.ndarray:
        ics = self.initial_conditions
        if isinstance(ics, BoxSampler):
            return ics.sample()
        return np.atleast_2d(np.asarray(ics, dtype=float))


@dataclass
class TuningResult:
    theta: np.ndarray
    history: list[dict] = field(default_factory=list)
    stop_reason: str = ""

    def __iter__(self):
        # allows ``theta, history = gradient_descent(...)``
        return iter((self.theta, self.history))


def _try_objective(task, theta, terminal_tol=None):
    try:
        L, term = task.objective_and_terminal(theta)
    except DivergenceError as exc:
        log.debug("candidate diverged: %s", exc)
        return None
    if terminal_tol is not None and term > terminal_tol:
        log.debug("candidate rejected: terminal norm %.3e", term)
        return None
    return L


def gradient_descent(solution: ShapingSolution, penalty: OvershootPenalty,
                     config: TuningConfig, theta0=None, callback=None) -> TuningResult:
    """Minimize the aggregate objective over ``theta`` starting from ``theta0`` (default 0).

    Each history record holds ``iter``, ``L`` and ``grad_norm`` at the
    current iterate and the length of the ``step`` taken from it (0 on the
    final record).  With ``step="backtracking"`` the recorded ``L`` sequence
    is non-increasing.
    """
    task = TuningTask(solution, penalty, config.resolve_initial_conditions(),
                      config.horizon, config.dt, config.mode)
    theta = np.zeros(solution.q_dim) if theta0 is None else np.array(theta0, dtype=float)
    L, grad = task.objective_and_gradient(theta)
    history: list[dict] = []
    alpha_prev = config.gamma
    reason = "max_iter"
    for it in range(config.max_iter):
        gnorm = float(np.linalg.norm(grad))
        rec = {"iter": it, "L": L, "grad_norm": gnorm, "step": 0.0}
        history.append(rec)
        if callback is not None:
            callback(it, theta, L, grad)
        if gnorm < config.grad_tol:
            reason = "grad_tol"
            break
        if config.step == "fixed":
            step_vec = -config.gamma * grad
            cand = theta + step_vec
            task.objective(cand)  # raises DivergenceError on blow-up
        elif config.step == "normalized":
            step_vec = -config.gamma * grad / gnorm
            cand = theta + step_vec
            task.objective(cand)
        else:
            direction = -grad / gnorm
            alpha = min(config.gamma, 2.0 * alpha_prev)
            cand = None
            for _ in range(config.max_backtracks):
                trial = theta + alpha * direction
                Lt = _try_objective(task, trial, config.terminal_tol)
                if Lt is not None and Lt <= L - config.armijo_c * alpha * gnorm:
                    cand = trial
                    break
                alpha *= config.shrink
            if cand is None:
                reason = "line_search"
                break
            alpha_prev = alpha
            step_vec = alpha * direction
        rec["step"] = float(np.linalg.norm(step_vec))
        theta = cand
        L, grad = task.objective_and_gradient(theta)
        check_nonnegativity(solution, theta, count=config.check_points)
        log.info("iter %d: L=%.6g |grad|=%.3e step=%.3e", it, L, gnorm, rec["step"])
        if rec["step"] < config.step_tol:
            history.append({"iter": it + 1, "L": L, "grad_norm": float(np.linalg.norm(grad)),
                            "step": 0.0})
            reason = "step_tol"
            break
    else:
        history.append({"iter": config.max_iter, "L": L,
                        "grad_norm": float(np.linalg.norm(grad)), "step": 0.0})
    return TuningResult(theta, history, reason)
