"""Exception hierarchy shared by all modules."""


class KgnfError(Exception):
    """Base class for toolkit errors."""


class DomainError(KgnfError, ValueError):
    """Argument outside the domain of a coordinate map or operator."""


class ConfigError(KgnfError, ValueError):
    """Invalid configuration or parameter value."""


class GridMismatchError(KgnfError, ValueError):
    """Fields live on different grids or time stamps."""


class StencilError(KgnfError, ValueError):
    """A finite-difference stencil is missing or too short."""


class GuardError(KgnfError, RuntimeError):
    """A frequency-division guard tripped (symbol too close to a zero)."""


class BlowUpError(KgnfError, RuntimeError):
    """The evolution exceeded the blow-up threshold."""

    def __init__(self, message, rho=None, amplitude=None):
        super().__init__(message)
        self.rho = rho
        self.amplitude = amplitude


class DomainExitError(KgnfError, RuntimeError):
    """The Cartesian solution reached the edge of the periodic domain."""


class BudgetExceededError(KgnfError, RuntimeError):
    """Quadrature could not reach the requested tolerance within its node budget."""

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class CheckFailure(KgnfError):
    """A numerical check did not meet its tolerance."""
