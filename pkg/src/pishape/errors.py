"""Exception and warning types raised across the package."""


class InvalidArgumentError(ValueError):
    """Bad shapes, out-of-range parameters, malformed configuration."""


class SolverError(RuntimeError):
    """An iterative solver failed to reach its tolerance.

    ``history`` holds the per-iteration residuals that were observed.
    """

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class RankDeficiencyError(SolverError):
    """Collocation matrix has lower effective rank than the number of unknowns.

    ``null_directions`` are unit coefficient vectors spanning the numerical
    null space.
    """

    def __init__(self, message, null_directions=None):
        super().__init__(message)
        self.null_directions = null_directions


class DivergenceError(RuntimeError):
    """A rollout left the blow-up bound or produced non-finite values."""

    def __init__(self, message, time=None, index=None):
        super().__init__(message)
        self.time = time
        self.index = index


class NumericOverflowError(DivergenceError):
    """Non-finite state or sensitivity values during integration."""


class AssumptionWarning(UserWarning):
    """A standing assumption (controllability, observability, sign) looks violated."""


class NonNegativityWarning(UserWarning):
    """A shaping term that should be non-negative went negative on the check grid."""
