"""Matrix-free solvers and uncertainty quantification for dynamic linear
Bayesian inverse problems."""

from . import decoupled, gengk, hybrid, io, linop, oracle, priorcov, problems, uq
from .errors import (BudgetExceededError, ConditioningError, DegenerateInputError,
                     DynInvError, ParameterError, ShapeError)

__all__ = [
    "decoupled", "gengk", "hybrid", "io", "linop", "oracle", "priorcov",
    "problems", "uq",
    "BudgetExceededError", "ConditioningError", "DegenerateInputError",
    "DynInvError", "ParameterError", "ShapeError",
]

__version__ = "0.1.0"
