"""Trajectory-level design objectives.

The overshoot penalty on state component ``c`` is the left-endpoint sum

    L = sum_k dt * (softplus(beta (x_c(t_k) - threshold)) - log 2) / beta

over every grid point ``k = 0..T``, including the final one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import InvalidArgumentError
from .simulate import Trajectory

__all__ = [
    "OvershootPenalty",
    "aggregate_objective",
    "evaluate_objective",
    "objective_state_gradient",
    "softplus",
]

LOG2 = np.log(2.0)


def softplus(a):
    """``log(1 + exp(a))`` without overflow."""
    return np.logaddexp(0.0, a)


@dataclass(frozen=True)
class OvershootPenalty:
    component: int
    threshold: float
    beta: float = 10.0
    dt: float = 0.01

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidArgumentError(f"beta must be positive, got {self.beta}")
        if not self.dt > 0:
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        if self.component < 0:
            raise InvalidArgumentError("component index must be non-negative")

    def terms(self, states) -> np.ndarray:
        """Per-grid-point contributions (already multiplied by ``dt``)."""
        a = self.beta * (np.asarray(states)[..., self.component] - self.threshold)
        return self.dt * (softplus(a) - LOG2) / self.beta

    def state_weights(self, states) -> np.ndarray:
        """``dL/dx_c(t_k) = dt * sigmoid(beta (x_c - threshold))``."""
        a = self.beta * (np.asarray(states)[..., self.component] - self.threshold)
        return self.dt * expit(a)


def _states(penalty: OvershootPenalty, traj) -> np.ndarray:
    X = traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    if X.ndim < 2 or X.shape[0] == 0:
        raise InvalidArgumentError("objective needs a non-empty trajectory")
    if penalty.component >= X.shape[-1]:
        raise InvalidArgumentError(
            f"component {penalty.component} out of range for state dimension {X.shape[-1]}")
    if isinstance(traj, Trajectory) and not np.isclose(traj.dt, penalty.dt, rtol=1e-12, atol=0):
        raise InvalidArgumentError(f"penalty dt {penalty.dt} differs from trajectory dt {traj.dt}")
    return X


def evaluate_objective(penalty: OvershootPenalty, traj) -> float:
    """Objective value of one trajectory (a :class:`Trajectory` or a state array)."""
    return float(penalty.terms(_states(penalty, traj)).sum())


def objective_state_gradient(penalty: OvershootPenalty, traj) -> np.ndarray:
    """``dL/dx(t_k)`` for every grid point, shape ``(T + 1, n)``."""
    X = _states(penalty, traj)
    G = np.zeros_like(X, dtype=float)
    G[..., penalty.component] = penalty.state_weights(X)
    return G


def aggregate_objective(penalty: OvershootPenalty, trajs: Sequence, mode: str = "sum") -> float:
    """Sum (or mean, ``mode="mean"``) of per-trajectory objectives."""
    if len(trajs) == 0:
        raise InvalidArgumentError("aggregate_objective needs at least one trajectory")
    total = sum(evaluate_objective(penalty, t) for t in trajs)
    if mode == "sum":
        return total
    if mode == "mean":
        return total / len(trajs)
    raise InvalidArgumentError(f"unknown aggregation mode {mode!r}")
