"""Control-affine systems ``xdot = f(x) + g(x) u`` with analytic Jacobians.

All callables broadcast over leading batch axes: ``x`` may be ``(n,)`` or
``(..., n)``.  Shapes of the returned arrays are

    f(x)      (..., n)
    g(x)      (..., n, p)
    df_dx(x)  (..., n, n)        df_dx[i, k] = d f_i / d x_k
    dg_dx(x)  (..., n, n, p)     dg_dx[i, k, j] = d g_ij / d x_k
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import AssumptionWarning, InvalidArgumentError

__all__ = [
    "CartPole",
    "ControlAffineSystem",
    "Linearization",
    "LtiSystem",
    "evaluate",
    "fd_jacobian_check",
    "linearize",
    "third_order_lti",
]


class ControlAffineSystem:
    """Base class; subclasses set ``n``, ``p`` and implement the four maps."""

    n: int
    p: int
    name = "system"
    #: True when g does not depend on x, so dg_dx is identically zero
    constant_input_matrix = False

    def f(self, x):
        raise NotImplementedError

    def g(self, x):
        raise NotImplementedError

    def df_dx(self, x):
        raise NotImplementedError

    def dg_dx(self, x):
        raise NotImplementedError

    def check_state(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.n:
            raise InvalidArgumentError(
                f"{self.name}: expected state of dimension {self.n}, got shape {x.shape}")
        return x

    def params(self) -> dict:
        return {}


def evaluate(system: ControlAffineSystem, x, u) -> np.ndarray:
    """State rate ``f(x) + g(x) u``."""
    x = system.check_state(x)
    u = np.asarray(u, dtype=float)
    if u.ndim == 0 and system.p == 1:
        u = u.reshape(1)
    if u.shape[-1] != system.p:
        raise InvalidArgumentError(
            f"{system.name}: expected input of dimension {system.p}, got shape {u.shape}")
    return system.f(x) + np.einsum("...ij,...j->...i", system.g(x), u)


@dataclass(frozen=True)
class LtiSystem(ControlAffineSystem):
    """Linear system ``xdot = A x + B u``."""

    A: np.ndarray
    B: np.ndarray
    name: str = "lti"
    constant_input_matrix = True

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.ndim != 2 or A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise InvalidArgumentError(f"incompatible A {A.shape} and B {B.shape}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    def f(self, x):
        return self.check_state(x) @ self.A.T

    def g(self, x):
        x = self.check_state(x)
        if x.ndim == 1:
            return self.B
        return np.broadcast_to(self.B, x.shape[:-1] + self.B.shape)

    def df_dx(self, x):
        x = self.check_state(x)
        return np.broadcast_to(self.A, x.shape[:-1] + self.A.shape)

    def dg_dx(self, x):
        x = self.check_state(x)
        return np.zeros(x.shape[:-1] + (self.n, self.n, self.p))

    def params(self):
        return {"A": self.A.tolist(), "B": self.B.tolist()}


def third_order_lti(omega_n: float = 2.0, zeta: float = 0.1) -> LtiSystem:
    """Underdamped mass-spring-damper with an extra first-order state."""
    A = [[0.0, 1.0, 0.0],
         [-omega_n**2, -2.0 * zeta * omega_n, 1.0],
         [0.0, 1.0, -1.0]]
    B = [[0.0], [1.0], [0.0]]
    return LtiSystem(A, B, name="lti3")


@dataclass(frozen=True)
class CartPole(ControlAffineSystem):
    """Cart-pole with state ``[p, xi, v, omega]`` and a horizontal cart force.

    Uses the model

        vdot     = (u + m_p sin(xi) (l omega^2 - grav cos(xi))) / D
        omegadot = (u cos(xi) + m_p l omega^2 cos(xi) sin(xi)
                    - (m_c + m_p) grav sin(xi)) / (l D)

    with ``D = m_c + m_p sin(xi)^2``.
    """

    m_c: float = 1.0
    m_p: float = 0.1
    l: float = 0.5
    grav: float = 9.81
    name: str = "cartpole"
    n = 4
    p = 1

    def __post_init__(self):
        if self.m_c <= 0 or self.m_p < 0 or self.l <= 0:
            raise InvalidArgumentError("cart-pole needs m_c > 0, m_p >= 0, l > 0")

    def _parts(self, x):
        x = self.check_state(x)
        xi, w = x[..., 1], x[..., 3]
        s, c = np.sin(xi), np.cos(xi)
        D = self.m_c + self.m_p * s * s
        return x, xi, w, s, c, D

    def _scalar_parts(self, x):
        # single state: numpy's sin/cos, then float arithmetic in the same
        # order as the array path, so both give identical bits
        _, xi, v, w = x.tolist()
        s, c = float(np.sin(xi)), float(np.cos(xi))
        return v, w, s, c, self.m_c + self.m_p * s * s

    def f(self, x):
        mp, l, gr = self.m_p, self.l, self.grav
        x = self.check_state(x)
        if x.ndim == 1:
            v, w, s, c, D = self._scalar_parts(x)
            return np.array([v, w, mp * s * (l * w * w - gr * c) / D,
                             (mp * l * w * w * c * s - (self.m_c + mp) * gr * s) / (l * D)])
        x, xi, w, s, c, D = self._parts(x)
        out = np.empty_like(x)
        out[..., 0] = x[..., 2]
        out[..., 1] = w
        out[..., 2] = mp * s * (l * w * w - gr * c) / D
        out[..., 3] = (mp * l * w * w * c * s - (self.m_c + mp) * gr * s) / (l * D)
        return out

    def g(self, x):
        x = self.check_state(x)
        if x.ndim == 1:
            _, _, _, c, D = self._scalar_parts(x)
            return np.array([[0.0], [0.0], [1.0 / D], [c / (self.l * D)]])
        x, xi, w, s, c, D = self._parts(x)
        out = np.zeros(x.shape + (1,))
        out[..., 2, 0] = 1.0 / D
        out[..., 3, 0] = c / (self.l * D)
        return out

    def df_dx(self, x):
        x, xi, w, s, c, D = self._parts(x)
        mp, mc, l, gr = self.m_p, self.m_c, self.l, self.grav
        dD = 2.0 * mp * s * c
        N3 = mp * s * (l * w * w - gr * c)
        dN3_dxi = mp * (l * w * w * c - gr * (c * c - s * s))
        N4 = mp * l * w * w * c * s - (mc + mp) * gr * s
        dN4_dxi = mp * l * w * w * (c * c - s * s) - (mc + mp) * gr * c
        J = np.zeros(x.shape + (4,))
        J[..., 0, 2] = 1.0
        J[..., 1, 3] = 1.0
        J[..., 2, 1] = (dN3_dxi * D - N3 * dD) / D**2
        J[..., 2, 3] = 2.0 * mp * s * l * w / D
        J[..., 3, 1] = (dN4_dxi * D - N4 * dD) / (l * D**2)
        J[..., 3, 3] = 2.0 * mp * w * c * s / D
        return J

    def dg_dx(self, x):
        x, xi, w, s, c, D = self._parts(x)
        dD = 2.0 * self.m_p * s * c
        T = np.zeros(x.shape + (4, 1))
        T[..., 2, 1, 0] = -dD / D**2
        T[..., 3, 1, 0] = (-s * D - c * dD) / (self.l * D**2)
        return T

    def params(self):
        return {"m_c": self.m_c, "m_p": self.m_p, "l": self.l, "grav": self.grav}


class Linearization(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    controllability_rank: int
    observability_rank: int | None


def _ctrb_rank(A, B):
    n = A.shape[0]
    blocks, M = [], B
    for _ in range(n):
        blocks.append(M)
        M = A @ M
    return int(np.linalg.matrix_rank(np.hstack(blocks)))


def linearize(system: ControlAffineSystem, Q=None) -> Linearization:
    """Jacobian pair at the origin plus rank diagnostics.

    Rank deficiencies are reported through :class:`AssumptionWarning`; they
    are not errors.  The observability rank is computed for the pair
    ``(A0, Q^{1/2})`` when ``Q`` is given.
    """
    x0 = np.zeros(system.n)
    A0 = np.array(system.df_dx(x0), dtype=float)
    B0 = np.array(system.g(x0), dtype=float)
    n = system.n
    rc = _ctrb_rank(A0, B0)
    if rc < n:
        warnings.warn(f"{system.name}: linearization not controllable (rank {rc} < {n})",
                      AssumptionWarning, stacklevel=2)
    ro = None
    if Q is not None:
        w, V = np.linalg.eigh(np.asarray(Q, dtype=float))
        Qh = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
        ro = _ctrb_rank(A0.T, Qh.T)
        if ro < n:
            warnings.warn(f"{system.name}: (A0, Q^1/2) not observable (rank {ro} < {n})",
                          AssumptionWarning, stacklevel=2)
    return Linearization(A0, B0, rc, ro)


def fd_jacobian_check(system: ControlAffineSystem, x, h: float = 1e-6) -> tuple[float, float]:
    """Relative error of the analytic Jacobians against central differences.

    Returns ``(err_f, err_g)`` measured in the Frobenius norm.
    """
    x = system.check_state(x).astype(float)
    n = system.n
    Jf = np.empty((n, n))
    Jg = np.empty((n, n, system.p))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        Jf[:, k] = (system.f(x + e) - system.f(x - e)) / (2 * h)
        Jg[:, k, :] = (system.g(x + e) - system.g(x - e)) / (2 * h)

    def rel(a, b):
        return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1.0)

    return rel(system.df_dx(x), Jf), rel(system.dg_dx(x), Jg)
