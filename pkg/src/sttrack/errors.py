"""Exception types shared across the package."""


class STTrackError(Exception):
    """Base class for all package errors."""


class DimensionError(STTrackError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(STTrackError, ArithmeticError):
    """An operation produced NaN or Inf."""


class ConfigurationError(STTrackError, ValueError):
    """A configuration value violates a structural constraint."""


class ContractError(STTrackError, RuntimeError):
    """A call violated an operation precondition."""
