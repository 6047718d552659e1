"""Least squares for tall collocation systems."""
from __future__ import annotations

import numpy as np

from .errors import RankDeficiencyError

__all__ = ["collocation_lstsq"]


def collocation_lstsq(A, B, ridge: float = 1e-10, rank_rtol: float = 1e-12):
    """Ridge-regularized least-squares solve of ``A X ~ B``.

    Columns of ``A`` are equilibrated to unit norm before an SVD, so monomials
    of very different magnitude share one scale.  The ridge acts on that
    equilibrated system and is relative to its largest singular value:
    ``min |A_s y - B|^2 + (ridge * s_max)^2 |y|^2``.

    Raises :class:`RankDeficiencyError` when a singular value falls below
    ``rank_rtol * s_max``; the null directions are reported in the original
    coefficient coordinates.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    vec = B.ndim == 1
    if vec:
        B = B[:, None]
    norms = np.linalg.norm(A, axis=0)
    dead = norms == 0.0
    if dead.any():
        null = np.eye(A.shape[1])[:, dead]
        raise RankDeficiencyError(
            f"collocation columns {np.flatnonzero(dead).tolist()} vanish at every sample",
            null_directions=null)
    As = A / norms
    U, s, Vt = np.linalg.svd(As, full_matrices=False)
    small = s < rank_rtol * s[0]
    if small.any():
        null = Vt[small].T / norms[:, None]
        null /= np.linalg.norm(null, axis=0)
        raise RankDeficiencyError(
            f"effective rank {int((~small).sum())} below {A.shape[1]} unknowns "
            f"(s_min/s_max = {s[-1] / s[0]:.3e})", null_directions=null)
    lam = (ridge * s[0]) ** 2
    filt = s / (s * s + lam)
    Y = Vt.T @ (filt[:, None] * (U.T @ B))
    X = Y / norms[:, None]
    return X[:, 0] if vec else X
