"""Nominal optimal control: value functions, Riccati and policy-iteration solvers.

The nominal problem minimizes the integral of ``|u|_R^2 + m0(x)`` with
``m0(x) = x'Qx + q(x)``.  Its value function ``phi0`` gives the law
``u0(x) = -1/2 R^{-1} g(x)' grad phi0(x)``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import linalg as sla

from .domain import Box
from .dynamics import ControlAffineSystem, linearize
from .errors import AssumptionWarning, InvalidArgumentError, SolverError
from .linalg import collocation_lstsq
from .polybasis import EvenPolyBasis

log = logging.getLogger(__name__)

__all__ = [
    "ControlWeight",
    "PolynomialValue",
    "QuadraticValue",
    "StateCost",
    "care_residual",
    "fit_nominal_policy_iteration",
    "hjb_residual",
    "optimal_control",
    "solve_care",
]


def _sym(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise InvalidArgumentError(f"{name} must be symmetric")
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class ControlWeight:
    """Positive definite input weight ``R``."""

    R: np.ndarray
    R_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        R = _sym(self.R, "R")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise InvalidArgumentError("R must be positive definite")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "R_inv", np.linalg.inv(R))

    @property
    def p(self) -> int:
        return self.R.shape[0]

    def norm_sq(self, u) -> np.ndarray:
        """``u' R u`` over the last axis."""
        u = np.asarray(u, dtype=float)
        return np.einsum("...i,ij,...j->...", u, self.R, u)


@dataclass(frozen=True)
class StateCost:
    """State cost ``m0(x) = x'Qx + q(x)``.

    ``q_basis``/``q_coeffs`` describe the optional higher-order part as an
    even polynomial; leave both ``None`` for a purely quadratic cost.
    """

    Q: np.ndarray
    q_basis: EvenPolyBasis | None = None
    q_coeffs: np.ndarray | None = None

    def __post_init__(self):
        Q = _sym(self.Q, "Q")
        if np.linalg.eigvalsh(Q).min() < -1e-12 * max(1.0, np.abs(Q).max()):
            raise InvalidArgumentError("Q must be non-negative definite")
        object.__setattr__(self, "Q", Q)
        if (self.q_basis is None) != (self.q_coeffs is None):
            raise InvalidArgumentError("q_basis and q_coeffs must be given together")
        if self.q_coeffs is not None:
            c = np.asarray(self.q_coeffs, dtype=float)
            if c.shape != (len(self.q_basis),):
                raise InvalidArgumentError("q_coeffs length must match q_basis")
            object.__setattr__(self, "q_coeffs", c)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m = np.einsum("...i,ij,...j->...", x, self.Q, x)
        if self.q_basis is not None:
            m = m + self.q_basis.values(x) @ self.q_coeffs
        return m

    def check_nonnegative(self, box: Box, count: int = 1000) -> float:
        """Minimum of ``q(x)`` over Halton points; warns when negative."""
        if self.q_basis is None:
            return 0.0
        qmin = float((self.q_basis.values(box.halton(count)) @ self.q_coeffs).min())
        if qmin < 0:
            warnings.warn(f"higher-order state cost q(x) reaches {qmin:.3e} < 0 on the domain",
                          AssumptionWarning, stacklevel=2)
        return qmin


class ValueFunction:
    """Common interface: ``value``, ``gradient`` and ``hessian`` broadcast over batches."""

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def hessian(self, x):
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class QuadraticValue(ValueFunction):
    """``phi(x) = x'Px``."""

    P: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "P", _sym(self.P, "P"))

    @property
    def n(self):
        return self.P.shape[0]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.P, x)

    def gradient(self, x):
        return 2.0 * np.asarray(x, dtype=float) @ self.P

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(2.0 * self.P, x.shape[:-1] + self.P.shape)

    def descriptor(self):
        return {"kind": "quadratic", "P": self.P.tolist()}


@dataclass(frozen=True)
class PolynomialValue(ValueFunction):
    """``phi(x) = psi(x)' c`` over an even monomial basis."""

    basis: EvenPolyBasis
    coeffs: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (len(self.basis),):
            raise InvalidArgumentError("coefficient vector length must match the basis")
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self):
        return self.basis.n_vars

    @cached_property
    def _maps(self):
        T0, T1, T2 = self.basis.derivative_maps()
        return T0 @ self.coeffs, T1 @ self.coeffs, T2 @ self.coeffs

    def value(self, x):
        return self.basis.monomials(x) @ self._maps[0]

    def gradient(self, x):
        return self.basis.monomials(x) @ self._maps[1]

    def hessian(self, x):
        return np.tensordot(self.basis.monomials(x), self._maps[2], axes=1)

    def quadratic_part(self) -> np.ndarray:
        """Symmetric ``P`` with ``x'Px`` equal to the degree-2 terms."""
        P = np.zeros((self.n, self.n))
        scale = np.ones(self.n) if self.basis.scale is None else np.asarray(self.basis.scale)
        for alpha, c in zip(self.basis.terms, self.coeffs):
            if sum(alpha) != 2:
                continue
            idx = [i for i, a in enumerate(alpha) for _ in range(a)]
            i, j = idx
            w = c / (scale[i] * scale[j])
            if i == j:
                P[i, i] += w
            else:
                P[i, j] += 0.5 * w
                P[j, i] += 0.5 * w
        return P

    def descriptor(self):
        return {"kind": "polynomial", "terms": self.basis.descriptor(),
                "coeffs": self.coeffs.tolist()}


def optimal_control(value: ValueFunction, system: ControlAffineSystem,
                    weight: ControlWeight) -> Callable:
    """Feedback law ``u(x) = -1/2 R^{-1} g(x)' grad phi(x)``."""

    def law(x):
        x = np.asarray(x, dtype=float)
        gT_grad = np.einsum("...ij,...i->...j", system.g(x), value.gradient(x))
        return -0.5 * gT_grad @ weight.R_inv.T

    return law


def hjb_residual(phi: ValueFunction, system: ControlAffineSystem, m: Callable,
                 weight: ControlWeight, x) -> np.ndarray:
    """``grad phi' f - 1/4 grad phi' g R^{-1} g' grad phi + m`` at ``x``."""
    x = system.check_state(x)
    dphi = phi.gradient(x)
    gT = np.einsum("...ij,...i->...j", system.g(x), dphi)
    quad = np.einsum("...i,ij,...j->...", gT, weight.R_inv, gT)
    return np.einsum("...i,...i->...", dphi, system.f(x)) - 0.25 * quad + m(x)


# -- Riccati ------------------------------------------------------------------

def care_residual(A, B, Q, R, P) -> float:
    """Frobenius norm of ``A'P + PA + Q - P B R^{-1} B' P``."""
    A, B, Q, R, P = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R, P))
    S = B @ np.linalg.solve(R, B.T)
    return float(np.linalg.norm(A.T @ P + P @ A + Q - P @ S @ P))


def _newton_kleinman(A, B, Q, R, P, tol, max_iter, history):
    for _ in range(max_iter):
        if history[-1] < tol:
            break
        K = np.linalg.solve(R, B.T @ P)
        Acl = A - B @ K
        Pn = sla.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        Pn = 0.5 * (Pn + Pn.T)
        res = care_residual(A, B, Q, R, Pn)
        if not np.isfinite(res) or res >= history[-1]:
            break
        P = Pn
        history.append(res)
    return P


def _riccati_flow(A, B, Q, R, dt, rate_tol, max_steps, history):
    S = B @ np.linalg.solve(R, B.T)

    def rate(P):
        return A.T @ P + P @ A + Q - P @ S @ P

    P = np.zeros_like(A)
    for k in range(max_steps):
        k1 = rate(P)
        if np.linalg.norm(k1) < rate_tol:
            return P, k
        k2 = rate(P + 0.5 * dt * k1)
        k3 = rate(P + 0.5 * dt * k2)
        k4 = rate(P + dt * k3)
        P = P + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if k % 1000 == 0:
            history.append(care_residual(A, B, Q, R, P))
        if not np.all(np.isfinite(P)):
            raise SolverError("Riccati flow diverged", history)
    raise SolverError(f"Riccati flow did not settle within {max_steps} steps", history)


def solve_care(A, B, cost: StateCost | np.ndarray, weight: ControlWeight | np.ndarray,
               tol: float = 1e-8, method: str = "schur", flow_dt: float = 1e-3,
               flow_rate_tol: float = 1e-12, flow_max_steps: int = 2_000_000) -> QuadraticValue:
    """Stabilizing solution of the continuous algebraic Riccati equation.

    ``method="schur"`` uses SciPy's Hamiltonian-Schur solver, ``"flow"``
    integrates the differential Riccati equation from ``P = 0`` with RK4
    until its rate falls below ``flow_rate_tol``.  Either result is polished
    with Newton-Kleinman steps and certified by the algebraic residual;
    failure to reach ``tol`` raises :class:`SolverError` carrying the
    residual history.
    """
    Q = cost.Q if isinstance(cost, StateCost) else _sym(cost, "Q")
    R = weight.R if isinstance(weight, ControlWeight) else ControlWeight(weight).R
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or Q.shape != (n, n) or R.shape != (B.shape[1],) * 2:
        raise InvalidArgumentError("inconsistent A, B, Q, R shapes")

    history: list[float] = []
    steps = 0
    if method == "schur":
        try:
            P = sla.solve_continuous_are(A, B, Q, R)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SolverError(f"Riccati solver failed: {exc}") from exc
    elif method == "flow":
        P, steps = _riccati_flow(A, B, Q, R, flow_dt, flow_rate_tol, flow_max_steps, history)
    else:
        raise InvalidArgumentError(f"unknown CARE method {method!r}")
    P = 0.5 * (P + P.T)
    history.append(care_residual(A, B, Q, R, P))
    P = _newton_kleinman(A, B, Q, R, P, tol, 8, history)
    res = history[-1]
    if not res < tol:
        raise SolverError(f"CARE residual {res:.3e} above tolerance {tol:.1e}", history)
    K = np.linalg.solve(R, B.T @ P)
    eig = np.linalg.eigvals(A - B @ K)
    return QuadraticValue(P, info={"care_residual": res, "residual_history": history,
                                   "gain": K, "closed_loop_eigs": eig,
                                   "flow_steps": steps, "method": method})


# -- policy iteration -----------------------------------------------------------

def fit_nominal_policy_iteration(system: ControlAffineSystem, cost: StateCost,
                                 weight: ControlWeight, basis: EvenPolyBasis, domain: Box,
                                 K: int = 2000, tol: float = 1e-8, max_iter: int = 50,
                                 n_validation: int = 1000, ridge: float = 1e-10,
                                 rise_rtol: float = 1e-3, callback=None) -> PolynomialValue:
    """Successive approximation of the HJB solution over an even polynomial basis.

    Starting from the LQR law of the linearization, each sweep solves the
    policy-evaluation equation ``grad phi' (f + g u_k) = -(m0 + |u_k|_R^2)``
    in least squares at ``K`` Halton points, then improves the policy with
    ``u_{k+1} = -1/2 R^{-1} g' grad phi``.  Iteration stops when the relative
    coefficient change drops below ``tol``.

    The maximum HJB residual on a disjoint validation point set is tracked;
    three consecutive increases by more than ``rise_rtol`` (relative) raise
    :class:`SolverError`.
    """
    if basis.n_vars != system.n or domain.dim != system.n:
        raise InvalidArgumentError("basis, domain and system dimensions disagree")
    quad = [i for i, t in enumerate(basis.terms) if sum(t) == 2]
    if len(quad) != system.n * (system.n + 1) // 2:
        raise InvalidArgumentError("policy iteration needs every quadratic term in the basis")
    if K < len(basis):
        raise InvalidArgumentError(f"K={K} samples cannot determine {len(basis)} coefficients")

    lin = linearize(system, cost.Q)
    if lin.controllability_rank < system.n:
        raise SolverError("linearization is not controllable; no LQR initial policy")
    P_lin = solve_care(lin.A, lin.B, cost, weight).P
    K_lin = weight.R_inv @ lin.B.T @ P_lin

    X = domain.halton(K)
    Xv = domain.halton(n_validation, skip=K)
    m0 = cost(X)
    G = basis.gradients(X)                       # (K, n, N)
    fX, gX = system.f(X), system.g(X)

    def lqr_policy(x):
        return -np.asarray(x) @ K_lin.T

    policy = lqr_policy
    coeffs = None
    res_hist: list[float] = []
    rises = 0
    for it in range(1, max_iter + 1):
        U = policy(X)
        F = fX + np.einsum("kij,kj->ki", gX, U)
        A_mat = np.einsum("kin,ki->kn", G, F)
        rhs = -(m0 + weight.norm_sq(U))
        new = collocation_lstsq(A_mat, rhs, ridge=ridge)
        phi = PolynomialValue(basis, new)
        res = float(np.abs(hjb_residual(phi, system, cost, weight, Xv)).max())
        change = np.inf if coeffs is None else (
            np.linalg.norm(new - coeffs) / max(1.0, np.linalg.norm(coeffs)))
        log.debug("policy iteration %d: change %.3e, validation residual %.3e", it, change, res)
        if callback is not None:
            callback(it, phi, res)
        coeffs = new
        policy = optimal_control(phi, system, weight)
        rises = rises + 1 if res_hist and res > res_hist[-1] * (1.0 + rise_rtol) else 0
        res_hist.append(res)
        if change < tol:
            break
        if rises >= 3:
            raise SolverError("policy iteration residual rose on 3 consecutive sweeps", res_hist)
    else:
        log.warning("policy iteration stopped at max_iter=%d (last change %.3e)", max_iter, change)

    values = phi.value(Xv)
    if values.min() <= 0:
        warnings.warn(f"nominal value function non-positive on the domain (min {values.min():.3e})",
                      AssumptionWarning, stacklevel=2)
    return PolynomialValue(basis, coeffs, info={
        "iterations": it, "residual_history": res_hist, "max_residual": res_hist[-1],
        "converged": bool(change < tol), "last_change": float(change),
        "lqr_P": P_lin, "min_value": float(values.min())})
