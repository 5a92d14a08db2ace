"""Exception types shared across the package."""


class SRBError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(SRBError, ValueError):
    """Operands have incompatible shapes."""


class NumericError(SRBError, FloatingPointError):
    """A computation produced NaN or Inf."""


class DegenerateVectorError(NumericError):
    """A vector's norm is too small for a cosine similarity."""


class DataError(SRBError, ValueError):
    """Malformed or missing input data."""


class ConfigError(SRBError, ValueError):
    """Invalid configuration keys or values."""


class CheckpointError(DataError):
    """A checkpoint cannot be read or does not match the configuration."""
