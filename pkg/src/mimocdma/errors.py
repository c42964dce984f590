"""Exception hierarchy shared across the package."""


class MimoCdmaError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(MimoCdmaError, ValueError):
    pass


class DimMismatch(MimoCdmaError, ValueError):
    pass


class InvalidPower(MimoCdmaError, ValueError):
    pass


class InvalidPrior(MimoCdmaError, ValueError):
    pass


class EnumerationTooLarge(MimoCdmaError):
    """Raised when an exact enumeration over a product constellation exceeds its cap."""


class IntegrationBudgetExceeded(MimoCdmaError):
    """Raised when a numerical expectation misses its requested relative accuracy."""


class EstimatorUnreliable(MimoCdmaError):
    """Raised when the plug-in mutual-information estimator fails its bias diagnostic."""


class NoConvergence(MimoCdmaError):
    """Raised when a fixed-point iteration exhausts its iteration budget.

    The last iterate is attached as ``state`` so callers can inspect it.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class MismatchedScenario(MimoCdmaError, ValueError):
    pass


class EigPoolTooSmall(MimoCdmaError):
    pass


class ConfigError(MimoCdmaError, ValueError):
    """Configuration problem; ``key`` and ``line`` locate it in the source file."""

    def __init__(self, message, key=None, line=None):
        loc = []
        if key:
            loc.append(f"key '{key}'")
        if line is not None:
            loc.append(f"line {line}")
        full = f"{message} ({', '.join(loc)})" if loc else message
        super().__init__(full)
        self.key = key
        self.line = line
