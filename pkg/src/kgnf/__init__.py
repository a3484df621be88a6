"""Numerical normal forms for quadratic-cubic Klein-Gordon equations in 1+1 dimensions."""

from .errors import (BlowUpError, BudgetExceededError, ConfigError, DomainError,
                     DomainExitError, GridMismatchError, GuardError, KgnfError, StencilError)
from .hypergrid import Beta1Profile, CoefficientSpec, Field, HyperGrid

__version__ = "0.1.0"

__all__ = [
    "Beta1Profile", "BlowUpError", "BudgetExceededError", "CoefficientSpec", "ConfigError",
    "DomainError", "DomainExitError", "Field", "GridMismatchError", "GuardError", "HyperGrid",
    "KgnfError", "StencilError",
]
