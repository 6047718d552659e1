"""Fixed-step RK4 integration and closed-loop rollouts.

The feedback law is re-evaluated at every Runge-Kutta stage, so a rollout
integrates the continuous-time closed loop rather than a sampled-data one.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import ControlAffineSystem
from .errors import DivergenceError, InvalidArgumentError, NumericOverflowError

__all__ = [
    "Trajectory",
    "closed_loop_field",
    "integrate_rk4",
    "n_steps_for",
    "rk4_step",
    "rollout",
    "rollout_batch",
    "write_trajectory_csv",
]

BLOWUP_BOUND = 1e6

Controller = Callable[[np.ndarray], np.ndarray]
Disturbance = Optional[Callable[[float], np.ndarray]]


@dataclass(frozen=True)
class Trajectory:
    """States on a uniform grid ``t_k = k dt`` and the feedback value at each of them.

    ``states`` and ``inputs`` both have ``T + 1`` rows; ``inputs[k]`` is the
    controller output at ``states[k]`` (a disturbance is not included).
    """

    dt: float
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path):
        write_trajectory_csv(self, path)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(traj: Trajectory, path):
    """Header ``t,x1..xn,u1..up``, one row per grid point."""
    n = traj.states.shape[1]
    p = traj.inputs.shape[1] if traj.inputs.ndim == 2 else 1
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, t in enumerate(traj.times):
            row = [_fmt(t)] + [_fmt(v) for v in traj.states[k]]
            row += [_fmt(v) for v in np.atleast_1d(traj.inputs[k])]
            w.writerow(row)


def n_steps_for(horizon: float, dt: float) -> int:
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    if not horizon > 0:
        raise InvalidArgumentError(f"horizon must be positive, got {horizon}")
    steps = int(round(horizon / dt))
    if abs(steps * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise InvalidArgumentError(f"horizon {horizon} is not a multiple of dt {dt}")
    return steps


def closed_loop_field(system: ControlAffineSystem, controller: Controller,
                      disturbance: Disturbance = None):
    """Vector field ``(t, x) -> f(x) + g(x) (u(x) + v(t))``."""

    def field(t, x):
        u = np.asarray(controller(x), dtype=float)
        if disturbance is not None:
            u = u + np.asarray(disturbance(t), dtype=float)
        if x.ndim == 1 and u.shape == (system.p,):
            return system.f(x) + system.g(x) @ u
        u = np.broadcast_to(u, x.shape[:-1] + (system.p,))
        return system.f(x) + np.einsum("...ij,...j->...i", system.g(x), u)

    return field


def _rk4(field, t, y, dt):
    k1 = field(t, y)
    k2 = field(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = field(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = field(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(system: ControlAffineSystem, controller: Controller, x, dt: float,
             disturbance: Disturbance = None, t: float = 0.0) -> np.ndarray:
    """One classical RK4 step of the closed loop starting at time ``t``."""
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    x = system.check_state(x)
    out = _rk4(closed_loop_field(system, controller, disturbance), t, x, dt)
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError(f"non-finite state at t={t + dt:g}", time=t + dt)
    return out


def integrate_rk4(field, y0, n_steps: int, dt: float, guard=None,
                  blowup: float = BLOWUP_BOUND) -> np.ndarray:
    """Integrate ``y' = field(t, y)`` and return all ``n_steps + 1`` grid values.

    ``y0`` may carry leading batch axes.  ``guard`` maps ``y`` to the array
    whose norm (over the last axis) is compared with ``blowup``; by default it
    is ``y`` itself.
    """
    y = np.array(y0, dtype=float)
    out = np.empty((n_steps + 1,) + y.shape)
    out[0] = y
    for k in range(n_steps):
        t = k * dt
        # overflow inside a step is caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            y = _rk4(field, t, y, dt)
        chk = y if guard is None else guard(y)
        if not np.all(np.isfinite(y)):
            bad = np.argwhere(~np.isfinite(chk.reshape(-1, chk.shape[-1])).all(axis=-1))
            idx = int(bad[0, 0]) if bad.size else None
            raise NumericOverflowError(f"non-finite values at t={t + dt:g}",
                                       time=t + dt, index=idx)
        norms = np.linalg.norm(chk, axis=-1)
        if np.any(norms > blowup):
            idx = int(np.argmax(np.atleast_1d(norms).reshape(-1) > blowup))
            raise DivergenceError(
                f"state norm exceeded {blowup:g} at t={t + dt:g}", time=t + dt, index=idx)
        out[k + 1] = y
    return out


def rollout_batch(system: ControlAffineSystem, controller: Controller, x0s,
                  horizon: float, dt: float, disturbance: Disturbance = None,
                  blowup: float = BLOWUP_BOUND) -> list[Trajectory]:
    """Integrate several initial conditions in one vectorized pass."""
    x0s = np.atleast_2d(system.check_state(x0s))
    steps = n_steps_for(horizon, dt)
    field = closed_loop_field(system, controller, disturbance)
    try:
        if len(x0s) == 1:
            # unbatched states take the cheaper scalar paths of the models
            X = integrate_rk4(field, x0s[0], steps, dt, blowup=blowup)[:, None]
        else:
            X = integrate_rk4(field, x0s, steps, dt, blowup=blowup)
    except DivergenceError as exc:
        if exc.index is not None:
            exc.args = (f"{exc.args[0]} (initial condition {x0s[exc.index].tolist()})",)
        raise
    times = np.arange(steps + 1) * dt
    U = np.asarray(controller(X), dtype=float).reshape(steps + 1, len(x0s), system.p)
    return [Trajectory(dt, times, X[:, b].copy(), U[:, b].copy()) for b in range(len(x0s))]


def rollout(system: ControlAffineSystem, controller: Controller, x0, horizon: float,
            dt: float, disturbance: Disturbance = None,
            blowup: float = BLOWUP_BOUND) -> Trajectory:
    """Closed-loop trajectory from ``x0`` over ``[0, horizon]``.

    Raises :class:`DivergenceError` if the state norm exceeds ``blowup``.
    """
    x0 = system.check_state(x0)
    if x0.ndim != 1:
        raise InvalidArgumentError("rollout takes one initial condition; use rollout_batch")
    return rollout_batch(system, controller, x0[None], horizon, dt,
                         disturbance=disturbance, blowup=blowup)[0]
