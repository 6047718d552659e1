"""Axis-aligned sampling boxes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .errors import InvalidArgumentError

__all__ = ["Box"]


@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not lo:
            raise InvalidArgumentError("box bounds must be non-empty and of equal length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise InvalidArgumentError(f"box needs lo < hi componentwise, got {lo} / {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def symmetric(cls, half_widths) -> "Box":
        hw = [abs(float(h)) for h in half_widths]
        return cls(tuple(-h for h in hw), tuple(hw))

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.hi) - np.asarray(self.lo))

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= np.asarray(self.lo) - tol) & (x <= np.asarray(self.hi) + tol), axis=-1)

    def halton(self, count: int, skip: int = 0) -> np.ndarray:
        """Unscrambled Halton points mapped into the box, ``(count, dim)``.

        ``skip`` drops the first points of the sequence, which gives a second
        deterministic point set disjoint from the first.
        """
        if count < 1:
            raise InvalidArgumentError(f"sample count must be positive, got {count}")
        eng = qmc.Halton(d=self.dim, scramble=False)
        if skip:
            eng.fast_forward(skip)
        return qmc.scale(eng.random(count), self.lo, self.hi)

    def uniform(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(count, self.dim))
