"""Exception types shared across the package."""


class DynInvError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(DynInvError, ValueError):
    """Operator/vector dimension mismatch."""


class ParameterError(DynInvError, ValueError):
    """Invalid configuration or kernel/solver parameter."""


class BudgetExceededError(DynInvError, RuntimeError):
    """Densification refused: requested matrix exceeds the entry budget."""


class ConditioningError(DynInvError, RuntimeError):
    """A factorization of a nominally SPD matrix failed."""

    def __init__(self, message, min_eig=None):
        super().__init__(message)
        self.min_eig = min_eig


class DegenerateInputError(DynInvError, ValueError):
    """Degenerate input (e.g. a zero right-hand side) where iteration is undefined."""
