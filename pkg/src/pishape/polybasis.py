"""Even-degree multivariate monomial bases.

A basis is an ordered list of exponent tuples ``alpha`` with even total degree
between 2 and ``max_degree``.  Terms are stored in graded-lexicographic order:
all degree-2 terms first, then degree 4, ..., and inside one degree the
exponent tuples are sorted lexicographically from largest to smallest, e.g.
``x1^2, x1 x2, x1 x3, x2^2, ...``.

Every evaluator accepts a single point of shape ``(n,)`` or a batch of shape
``(..., n)`` and broadcasts over the leading axes.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from math import comb

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "EvenPolyBasis",
    "enumerate_even_monomials",
    "eval_basis",
    "even_basis_size",
]


def even_basis_size(n_vars: int, max_degree: int) -> int:
    """Closed-form number of monomials of even degree in ``[2, max_degree]``."""
    return sum(comb(d + n_vars - 1, n_vars - 1) for d in range(2, max_degree + 1, 2))


@dataclass(frozen=True)
class EvenPolyBasis:
    """Ordered set of even-degree monomials in ``n_vars`` variables.

    ``scale`` optionally rescales each coordinate, so that term ``i`` is
    ``prod_j (x_j / scale_j) ** terms[i][j]``.  With ``scale=None`` the terms
    are plain monomials.
    """

    n_vars: int
    max_degree: int
    terms: tuple[tuple[int, ...], ...]
    scale: tuple[float, ...] | None = None
    _exps: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        exps = np.array(self.terms, dtype=np.int64).reshape(len(self.terms), self.n_vars)
        deg = exps.sum(axis=1)
        if (exps < 0).any() or (deg % 2).any() or (deg < 2).any() or (deg > self.max_degree).any():
            raise InvalidArgumentError("every term needs an even total degree in [2, max_degree]")
        if len(set(self.terms)) != len(self.terms):
            raise InvalidArgumentError("basis terms must be distinct")
        exps.setflags(write=False)
        object.__setattr__(self, "_exps", exps)
        if self.scale is not None:
            if len(self.scale) != self.n_vars or min(self.scale) <= 0:
                raise InvalidArgumentError("scale must hold one positive entry per variable")

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def exponents(self) -> np.ndarray:
        """Read-only ``(N, n_vars)`` integer array of exponents."""
        return self._exps

    @property
    def degrees(self) -> np.ndarray:
        return self._exps.sum(axis=1)

    def with_scale(self, scale) -> "EvenPolyBasis":
        return EvenPolyBasis(self.n_vars, self.max_degree, self.terms,
                             None if scale is None else tuple(float(s) for s in scale))

    def same_monomials(self, other) -> bool:
        """True when :meth:`monomials` of both bases agree (scales may differ)."""
        return self.n_vars == other.n_vars and self.max_degree == other.max_degree

    def descriptor(self) -> list[list[int]]:
        """Exponent tuples as plain lists, for serialization."""
        return [list(t) for t in self.terms]

    # -- evaluation ---------------------------------------------------------
    #
    # Every term and each of its partial derivatives up to second order is a
    # linear combination of the monomials of degree <= max_degree.  Those
    # combinations are precomputed once, so evaluation is one power table
    # followed by a matrix product.

    @cached_property
    def _table(self) -> np.ndarray:
        """Exponents of all monomials of degree ``0..max_degree``, ``(n_mono, n)``."""
        rows = []
        for d in range(self.max_degree + 1):
            for combo in itertools.combinations_with_replacement(range(self.n_vars), d):
                alpha = [0] * self.n_vars
                for idx in combo:
                    alpha[idx] += 1
                rows.append(tuple(alpha))
        return np.array(rows, dtype=np.int64).reshape(len(rows), self.n_vars)

    @cached_property
    def _maps(self):
        n, N = self.n_vars, len(self)
        index = {tuple(r): k for k, r in enumerate(self._table.tolist())}
        m = len(index)
        inv_s = np.ones(N) if self.scale is None else np.array(
            [np.prod(np.asarray(self.scale, dtype=float) ** -np.array(t)) for t in self.terms])
        T0 = np.zeros((m, N))
        T1 = np.zeros((m, n, N))
        T2 = np.zeros((m, n, n, N))
        for i, t in enumerate(self.terms):
            a = np.array(t)
            T0[index[t], i] = inv_s[i]
            for j in range(n):
                if a[j] == 0:
                    continue
                b = a.copy()
                b[j] -= 1
                T1[index[tuple(b)], j, i] = a[j] * inv_s[i]
                for k in range(n):
                    if b[k] == 0:
                        continue
                    c = b.copy()
                    c[k] -= 1
                    T2[index[tuple(c)], j, k, i] = a[j] * b[k] * inv_s[i]
        for T in (T0, T1, T2):
            T.setflags(write=False)
        return T0, T1, T2

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.n_vars:
            raise InvalidArgumentError(
                f"expected state of dimension {self.n_vars}, got shape {x.shape}")
        return x

    def monomials(self, x) -> np.ndarray:
        """All monomials of degree ``<= max_degree`` at ``x``, ``(..., n_mono)``."""
        x = self._check(x)
        pw = np.empty(x.shape + (self.max_degree + 1,))
        pw[..., 0] = 1.0
        for k in range(1, self.max_degree + 1):
            np.multiply(pw[..., k - 1], x, out=pw[..., k])
        pw = pw.reshape(x.shape[:-1] + (-1,))
        return np.multiply.reduce(pw[..., self._gather], axis=-2)

    @cached_property
    def _gather(self):
        # flat index of x_i ** e_i into the (n_vars, max_degree + 1) power table
        rows = np.arange(self.n_vars)[:, None] * (self.max_degree + 1)
        return rows + self._table.T

    def derivative_maps(self):
        """``(T0, T1, T2)`` mapping monomials to values, gradients and Hessians.

        Shapes ``(n_mono, N)``, ``(n_mono, n, N)`` and ``(n_mono, n, n, N)``.
        Contracting ``T1`` or ``T2`` with a coefficient matrix ahead of time
        gives fast evaluators for fixed combinations of terms.
        """
        return self._maps

    def values(self, x) -> np.ndarray:
        """Term values, shape ``(..., N)``."""
        return self.monomials(x) @ self._maps[0]

    def gradients(self, x) -> np.ndarray:
        """Gradients, shape ``(..., n, N)``; column ``i`` is the gradient of term ``i``."""
        return np.tensordot(self.monomials(x), self._maps[1], axes=1)

    def values_and_gradients(self, x):
        mono = self.monomials(x)
        return mono @ self._maps[0], np.tensordot(mono, self._maps[1], axes=1)

    def hessians(self, x) -> np.ndarray:
        """Second derivatives, shape ``(..., n, n, N)``."""
        return np.tensordot(self.monomials(x), self._maps[2], axes=1)


def enumerate_even_monomials(n_vars: int, max_degree: int, scale=None) -> EvenPolyBasis:
    """All monomials of even degree ``2, 4, ..., max_degree`` in graded-lex order.

    >>> len(enumerate_even_monomials(3, 4))
    21
    """
    if int(n_vars) != n_vars or n_vars < 1:
        raise InvalidArgumentError(f"n_vars must be a positive integer, got {n_vars!r}")
    if int(max_degree) != max_degree or max_degree < 2 or max_degree % 2:
        raise InvalidArgumentError(f"max_degree must be an even integer >= 2, got {max_degree!r}")
    n_vars, max_degree = int(n_vars), int(max_degree)
    terms = []
    for d in range(2, max_degree + 1, 2):
        # combinations_with_replacement yields index multisets in lex order,
        # which maps to exponent tuples in descending lex order
        for combo in itertools.combinations_with_replacement(range(n_vars), d):
            alpha = [0] * n_vars
            for idx in combo:
                alpha[idx] += 1
            terms.append(tuple(alpha))
    basis = EvenPolyBasis(n_vars, max_degree, tuple(terms))
    return basis if scale is None else basis.with_scale(scale)


def eval_basis(basis: EvenPolyBasis, x):
    """Return ``(values, gradients)`` of every basis term at ``x``.

    ``values`` has shape ``(N,)`` and ``gradients`` shape ``(n, N)`` for a
    single point; leading batch axes are carried through.
    """
    return basis.values_and_gradients(x)
