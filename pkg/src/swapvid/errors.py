"""Exception types shared across the package."""


class SwapvidError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(SwapvidError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(SwapvidError, ValueError):
    """Invalid configuration value (bad key, non-divisible channels, ...)."""


class ContractError(SwapvidError, ValueError):
    """A documented precondition of an operation was violated."""


class DataError(SwapvidError, ValueError):
    """Missing or unreadable input data."""


class NumericError(SwapvidError, ArithmeticError):
    """Non-finite values detected where finiteness is required."""
