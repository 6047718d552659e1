"""Numerical stability checks for a shaped closed loop.

Each check rolls out one initial condition and summarizes it in a
:class:`StabilityReport`.  The reports only describe the envelope that was
actually simulated (initial condition, horizon, step, gain, disturbance);
they never claim a global property.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InvalidArgumentError
from .shaping import ShapedValue, ShapingSolution, shaped_controller
from .simulate import BLOWUP_BOUND, Trajectory, rollout

log = logging.getLogger(__name__)

__all__ = [
    "StabilityReport",
    "gain_scaling_check",
    "iss_check",
    "lyapunov_decrease_check",
    "sinusoid_pulse",
]


@dataclass(frozen=True)
class StabilityReport:
    """Outcome of one simulated stability check.

    ``flags`` maps each verdict name to a bool; :attr:`passed` is their
    conjunction.  ``envelope`` records what was simulated.  When the rollout
    diverged, the three norms are set to the blow-up bound and every flag is
    false.
    """

    check: str
    max_lyapunov_increase: float
    terminal_norm: float
    sup_state_norm: float
    flags: dict
    envelope: dict
    trajectory: Trajectory | None = field(default=None, repr=False, compare=False)

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def to_dict(self) -> dict:
        return {"check": self.check, "passed": self.passed,
                "max_lyapunov_increase": self.max_lyapunov_increase,
                "terminal_norm": self.terminal_norm,
                "sup_state_norm": self.sup_state_norm,
                "flags": dict(self.flags), "envelope": dict(self.envelope)}


def _lyapunov_increase(phi: ShapedValue, states: np.ndarray) -> float:
    if len(states) < 2:
        return 0.0
    return float(np.diff(phi.value(states)).max())


def _diverged(check, exc, envelope, flag_names, blowup):
    log.warning("%s: rollout diverged: %s", check, exc)
    env = dict(envelope, diverged_at=exc.time)
    b = float(blowup)
    return StabilityReport(check, b, b, b, {k: False for k in flag_names}, env)


def _run(solution, theta, x0, horizon, dt, gain=1.0, disturbance=None, blowup=BLOWUP_BOUND):
    ctrl = shaped_controller(solution, theta, gain=gain)
    return rollout(solution.system, ctrl, np.asarray(x0, dtype=float), horizon, dt,
                   disturbance=disturbance, blowup=blowup)


def lyapunov_decrease_check(solution: ShapingSolution, theta, x0, horizon: float, dt: float,
                            increase_tol: float = 1e-6, terminal_tol: float = 0.05,
                            blowup: float = BLOWUP_BOUND) -> StabilityReport:
    """Roll out ``u_p`` and measure ``max_k phi_p(x_{k+1}) - phi_p(x_k)``."""
    return gain_scaling_check(solution, theta, 0.5, x0, horizon, dt,
                              increase_tol=increase_tol, terminal_tol=terminal_tol,
                              blowup=blowup, _name="lyapunov")


def gain_scaling_check(solution: ShapingSolution, theta, epsilon: float, x0, horizon: float,
                       dt: float, increase_tol: float = 1e-6, terminal_tol: float = 0.1,
                       blowup: float = BLOWUP_BOUND, _name: str = "gain_scaling") -> StabilityReport:
    """Roll out ``(1/2 + epsilon) u_p`` and report convergence and ``phi_p`` monotonicity.

    ``epsilon = 0.5`` is the unscaled law and reproduces
    :func:`lyapunov_decrease_check`.
    """
    if not epsilon > 0:
        raise InvalidArgumentError(f"epsilon must be positive, got {epsilon}")
    gain = 0.5 + float(epsilon)
    env = {"x0": np.asarray(x0, dtype=float).tolist(), "horizon": float(horizon),
           "dt": float(dt), "gain": gain, "increase_tol": increase_tol,
           "terminal_tol": terminal_tol}
    names = ("lyapunov_decrease", "terminal_converged")
    try:
        traj = _run(solution, theta, x0, horizon, dt, gain=gain, blowup=blowup)
    except DivergenceError as exc:
        return _diverged(_name, exc, env, names, blowup)
    phi = ShapedValue.from_solution(solution, theta)
    inc = _lyapunov_increase(phi, traj.states)
    term = float(np.linalg.norm(traj.states[-1]))
    sup = float(np.linalg.norm(traj.states, axis=1).max())
    flags = {"lyapunov_decrease": inc < increase_tol, "terminal_converged": term < terminal_tol}
    return StabilityReport(_name, inc, term, sup, flags, env, traj)


def sinusoid_pulse(amplitude: float, omega: float = 1.0, t_off: float = np.inf, p: int = 1):
    """``v(t) = amplitude sin(omega t)`` on every input channel for ``t < t_off``, else 0."""
    def v(t):
        return np.full(p, amplitude * np.sin(omega * t) if t < t_off else 0.0)

    v.__name__ = f"sinusoid_pulse(amplitude={amplitude}, omega={omega}, t_off={t_off})"
    return v


def iss_check(solution: ShapingSolution, theta, disturbance, x0, horizon: float, dt: float,
              t_off: float | None = None, sup_bound: float = 100.0, terminal_tol: float = 0.05,
              increase_tol: float = 1e-6, blowup: float = BLOWUP_BOUND) -> StabilityReport:
    """Shaped loop driven through the input channel: ``xdot = f + g (u_p + v(t))``.

    ``v`` is switched off from ``t_off`` (default ``horizon / 2``).  The
    report gives the state sup-norm over the whole run, the terminal norm,
    and the largest ``phi_p`` increase once ``v`` is off.  ``disturbance=None``
    gives the undisturbed loop.
    """
    t_off = horizon / 2 if t_off is None else float(t_off)
    env = {"x0": np.asarray(x0, dtype=float).tolist(), "horizon": float(horizon),
           "dt": float(dt), "t_off": t_off, "sup_bound": sup_bound,
           "terminal_tol": terminal_tol, "increase_tol": increase_tol,
           "disturbance": getattr(disturbance, "__name__", repr(disturbance))}
    names = ("bounded", "terminal_converged", "lyapunov_decrease_unforced")
    if disturbance is None:
        dist = None
    else:
        p = solution.system.p

        def dist(t):
            return np.asarray(disturbance(t), dtype=float) if t < t_off else np.zeros(p)
    try:
        traj = _run(solution, theta, x0, horizon, dt, disturbance=dist, blowup=blowup)
    except DivergenceError as exc:
        return _diverged("iss", exc, env, names, blowup)
    phi = ShapedValue.from_solution(solution, theta)
    # a step is unforced once it starts at or after t_off
    k_off = int(np.searchsorted(traj.times, t_off - 1e-9 * dt)) if dist is not None else 0
    inc = _lyapunov_increase(phi, traj.states[k_off:])
    term = float(np.linalg.norm(traj.states[-1]))
    sup = float(np.linalg.norm(traj.states, axis=1).max())
    flags = {"bounded": bool(np.isfinite(sup) and sup < sup_bound),
             "terminal_converged": term < terminal_tol,
             "lyapunov_decrease_unforced": inc < increase_tol}
    return StabilityReport("iss", inc, term, sup, flags, env, traj)
