"""Exception types shared across the package."""


class TmepsrError(Exception):
    """Base class for package errors."""


class ConfigError(TmepsrError, ValueError):
    """Invalid configuration key, value, or command usage."""


class DataError(TmepsrError, ValueError):
    """Malformed or insufficient input data."""


class DimensionError(TmepsrError, ValueError):
    """Tensor shape mismatch."""


class NumericError(TmepsrError, ArithmeticError):
    """Non-finite value produced by a numeric operation."""
