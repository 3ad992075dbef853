"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid shapes, parameters or configuration values."""


class UnsupportedPrimitiveError(ValueError):
    """A loss was built from an operation the autodiff engine does not know."""


class NonFiniteError(FloatingPointError):
    """A gradient, loss or state became NaN or infinite."""


class EnvironmentFault(FloatingPointError):
    """Integration produced a non-finite state (usually a bad ``dt``)."""


class CorruptCheckpointError(IOError):
    """A checkpoint file failed its manifest, size or checksum checks."""


class PropertyViolation(AssertionError):
    """A certified property (contraction, improvement) did not hold."""
