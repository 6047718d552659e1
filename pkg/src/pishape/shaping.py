"""Closed-form shaping of a solved optimal control problem.

Given the nominal value ``phi0`` and an added state cost
``mbar(x, theta) = psi_m(x)' theta``, the shaping term ``h(x, theta) =
psi_h(x)' c`` solves the linear first-order PDE

    grad h(x)' F_cl(x) = -mbar(x, theta),
    F_cl(x) = f(x) - 1/2 g(x) R^{-1} g(x)' grad phi0(x),

and the shaped problem, whose running cost adds
``v = mbar + 1/4 |R^{-1} g' grad h|_R^2``, has value ``phi0 + h`` and law
``u_p = -1/2 R^{-1} g' (grad phi0 + grad h)``.

The PDE is linear in both ``c`` and ``theta``, so one collocation solve
yields a fixed matrix ``M`` with ``c = M theta`` for every ``theta``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .domain import Box
from .dynamics import ControlAffineSystem
from .errors import InvalidArgumentError, NonNegativityWarning
from .linalg import collocation_lstsq
from .nominal import ControlWeight, PolynomialValue, StateCost, ValueFunction, hjb_residual
from .polybasis import EvenPolyBasis

log = logging.getLogger(__name__)

__all__ = [
    "ShapedValue",
    "ShapingProblem",
    "ShapingSolution",
    "assemble_collocation",
    "check_nonnegativity",
    "effective_added_cost",
    "h_value_grad",
    "nominal_closed_loop_field",
    "shaped_control",
    "shaped_controller",
    "shaped_hjb_residual",
    "solve_shaping",
    "theorem1_identity_residual",
]


def nominal_closed_loop_field(phi0: ValueFunction, system: ControlAffineSystem,
                              weight: ControlWeight, x) -> np.ndarray:
    """``f(x) - 1/2 g(x) R^{-1} g(x)' grad phi0(x)``."""
    x = system.check_state(x)
    g = system.g(x)
    gT = np.einsum("...ij,...i->...j", g, phi0.gradient(x))
    return system.f(x) - 0.5 * np.einsum("...ij,...j->...i", g, gT @ weight.R_inv.T)


@dataclass(frozen=True)
class ShapingProblem:
    """Everything needed to build the map from ``theta`` to ``h`` coefficients.

    ``cost`` is the nominal state cost; it only enters the HJB diagnostics.
    """

    system: ControlAffineSystem
    weight: ControlWeight
    phi0: ValueFunction
    basis_m: EvenPolyBasis
    basis_h: EvenPolyBasis
    domain: Box
    K: int = 2000
    cost: StateCost | None = None

    def __post_init__(self):
        n = self.system.n
        if self.basis_m.n_vars != n or self.basis_h.n_vars != n or self.domain.dim != n:
            raise InvalidArgumentError("bases, domain and system must share the state dimension")
        if self.weight.p != self.system.p:
            raise InvalidArgumentError("R size does not match the input dimension")

    @property
    def q_dim(self) -> int:
        return len(self.basis_m)

    @property
    def N(self) -> int:
        return len(self.basis_h)

    def samples(self) -> np.ndarray:
        return self.domain.halton(self.K)


def assemble_collocation(problem: ShapingProblem, points=None):
    """Collocation matrices ``(A_mat, B_mat)`` of shapes ``(K, N)`` and ``(K, q_dim)``.

    Row ``k`` encodes the PDE at sample ``x_k``: ``A_mat[k, i] = grad
    psi_h,i(x_k)' F_cl(x_k)`` and ``B_mat[k, j] = psi_m,j(x_k)``.  Samples
    default to the problem's Halton set.
    """
    X = problem.samples() if points is None else np.atleast_2d(
        problem.system.check_state(points))
    F = nominal_closed_loop_field(problem.phi0, problem.system, problem.weight, X)
    A_mat = np.einsum("kin,ki->kn", problem.basis_h.gradients(X), F)
    B_mat = problem.basis_m.values(X)
    return A_mat, B_mat


@dataclass(frozen=True)
class ShapingSolution:
    """Linear map ``c = M theta`` plus collocation diagnostics.

    ``residual_rms`` is the worst-case RMS collocation residual per unit
    ``|theta|`` (spectral norm of ``A M + B`` over ``sqrt(K)``);
    ``residual_rms_columns`` holds it for each unit vector ``e_j``.
    """

    problem: ShapingProblem
    M: np.ndarray
    residual_rms: float
    residual_rms_columns: np.ndarray = field(repr=False)

    @property
    def phi0(self):
        return self.problem.phi0

    @property
    def basis_h(self):
        return self.problem.basis_h

    @property
    def basis_m(self):
        return self.problem.basis_m

    @property
    def system(self):
        return self.problem.system

    @property
    def weight(self):
        return self.problem.weight

    @property
    def q_dim(self):
        return self.M.shape[1]

    def coefficients(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.q_dim,):
            raise InvalidArgumentError(f"theta must have length {self.q_dim}, got {theta.shape}")
        return self.M @ theta

    def m_bar(self, theta, x) -> np.ndarray:
        return self.basis_m.values(x) @ np.asarray(theta, dtype=float)

    def summary(self) -> dict:
        return {"N": self.M.shape[0], "q_dim": self.M.shape[1], "K": self.problem.K,
                "residual_rms": self.residual_rms,
                "basis_h": self.basis_h.descriptor(), "basis_m": self.basis_m.descriptor()}


def solve_shaping(problem: ShapingProblem, ridge: float = 1e-10) -> ShapingSolution:
    """Least-squares collocation solve of the shaping PDE for every ``theta`` at once.

    Returns ``M = -A_mat^+ B_mat`` (ridge-regularized).  Raises
    :class:`~pishape.errors.RankDeficiencyError` if ``A_mat`` has lower
    effective rank than the number of ``h`` terms.
    """
    if problem.K < problem.N:
        raise InvalidArgumentError(
            f"K={problem.K} samples leave {problem.N} h-coefficients underdetermined")
    A_mat, B_mat = assemble_collocation(problem)
    if not (np.all(np.isfinite(A_mat)) and np.all(np.isfinite(B_mat))):
        raise InvalidArgumentError("collocation matrices contain non-finite entries")
    M = -collocation_lstsq(A_mat, B_mat, ridge=ridge)
    Res = A_mat @ M + B_mat
    sqrtK = np.sqrt(A_mat.shape[0])
    rms = float(np.linalg.norm(Res, 2) / sqrtK)
    cols = np.linalg.norm(Res, axis=0) / sqrtK
    log.info("shaping solve: N=%d q=%d K=%d residual_rms=%.3e",
             M.shape[0], M.shape[1], A_mat.shape[0], rms)
    return ShapingSolution(problem, M, rms, cols)


def h_value_grad(solution: ShapingSolution, theta, x):
    """``(h, grad h)`` at ``x``; shapes ``(...)`` and ``(..., n)``."""
    c = solution.coefficients(theta)
    vals, grads = solution.basis_h.values_and_gradients(x)
    return vals @ c, grads @ c


def _law(solution, grad_total, x):
    g = solution.system.g(x)
    if g.ndim == 2:
        return -0.5 * solution.weight.R_inv @ (g.T @ grad_total)
    return -0.5 * np.einsum("...ij,...i->...j", g, grad_total) @ solution.weight.R_inv.T


def shaped_control(solution: ShapingSolution, theta, x) -> np.ndarray:
    """``u_p(x) = -1/2 R^{-1} g(x)' (grad phi0(x) + grad h(x, theta))``."""
    x = solution.system.check_state(x)
    _, dh = h_value_grad(solution, theta, x)
    return _law(solution, solution.phi0.gradient(x) + dh, x)


def shaped_controller(solution: ShapingSolution, theta, gain: float = 1.0):
    """Feedback callable ``x -> gain * u_p(x)`` with ``c = M theta`` precomputed."""
    c = solution.coefficients(theta)
    phi0, basis = solution.phi0, solution.basis_h
    gmap = basis.derivative_maps()[1] @ c
    if isinstance(phi0, PolynomialValue) and basis.same_monomials(phi0.basis):
        # one power table serves both gradients
        gmap = gmap + phi0.basis.derivative_maps()[1] @ phi0.coeffs

        def grad(x):
            return basis.monomials(x) @ gmap
    else:
        def grad(x):
            return phi0.gradient(x) + basis.monomials(x) @ gmap

    def law(x):
        x = np.asarray(x, dtype=float)
        u = _law(solution, grad(x), x)
        return gain * u if gain != 1.0 else u

    return law


def effective_added_cost(solution: ShapingSolution, theta, x):
    """``(v, mbar, quad)`` with ``v = mbar + quad`` and ``quad = 1/4 |R^{-1} g' grad h|_R^2``."""
    x = solution.system.check_state(x)
    _, dh = h_value_grad(solution, theta, x)
    w = np.einsum("...ij,...i->...j", solution.system.g(x), dh) @ solution.weight.R_inv.T
    quad = 0.25 * solution.weight.norm_sq(w)
    mbar = solution.m_bar(theta, x)
    return mbar + quad, mbar, quad


@dataclass(frozen=True)
class ShapedValue(ValueFunction):
    """``phi_p = phi0 + h(., theta)`` as a value-function object."""

    phi0: ValueFunction
    basis_h: EvenPolyBasis
    c: np.ndarray

    @classmethod
    def from_solution(cls, solution: ShapingSolution, theta) -> "ShapedValue":
        return cls(solution.phi0, solution.basis_h, solution.coefficients(theta))

    def value(self, x):
        return self.phi0.value(x) + self.basis_h.values(x) @ self.c

    def gradient(self, x):
        return self.phi0.gradient(x) + self.basis_h.gradients(x) @ self.c

    def hessian(self, x):
        return self.phi0.hessian(x) + self.basis_h.hessians(x) @ self.c

    def descriptor(self):
        return {"kind": "shaped", "phi0": self.phi0.descriptor(), "c": self.c.tolist()}


def _zero_cost(x):
    return np.zeros(np.shape(x)[:-1])


def shaped_hjb_residual(solution: ShapingSolution, theta, x) -> np.ndarray:
    """HJB residual of ``phi_p`` against the shaped running cost ``m0 + v``."""
    m0 = solution.problem.cost or _zero_cost
    phip = ShapedValue.from_solution(solution, theta)

    def m(z):
        return m0(z) + effective_added_cost(solution, theta, z)[0]

    return hjb_residual(phip, solution.system, m, solution.weight, x)


def theorem1_identity_residual(solution: ShapingSolution, theta, x) -> np.ndarray:
    """Shaped HJB residual minus nominal HJB residual minus the shaping PDE residual.

    The three pieces cancel algebraically for any ``h``, exact or not, so
    the result should be rounding noise.
    """
    system, weight = solution.system, solution.weight
    x = system.check_state(x)
    m0 = solution.problem.cost or _zero_cost
    shaped = shaped_hjb_residual(solution, theta, x)
    nominal = hjb_residual(solution.phi0, system, m0, weight, x)
    _, dh = h_value_grad(solution, theta, x)
    F = nominal_closed_loop_field(solution.phi0, system, weight, x)
    pde = np.einsum("...i,...i->...", dh, F) + solution.m_bar(theta, x)
    return shaped - nominal - pde


def check_nonnegativity(solution: ShapingSolution, theta, count: int = 1000,
                        warn: bool = True) -> tuple[float, float]:
    """Minima of ``mbar`` and ``h`` over Halton points in the domain.

    Neither is enforced to be non-negative; violations only warn.
    """
    X = solution.problem.domain.halton(count)
    mmin = float(solution.m_bar(theta, X).min())
    hmin = float((solution.basis_h.values(X) @ solution.coefficients(theta)).min())
    if warn and (mmin < 0 or hmin < 0):
        msg = f"shaping terms negative on the check grid: min mbar={mmin:.3e}, min h={hmin:.3e}"
        log.warning(msg)
        warnings.warn(msg, NonNegativityWarning, stacklevel=2)
    return mmin, hmin
