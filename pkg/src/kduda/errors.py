"""Shared exception types.

Every deliberate failure in the library raises one of these, so callers
(and the CLI) can map problems to exit codes without string matching.
"""


class KdudaError(Exception):
    """Base class for all library errors."""


class ShapeError(KdudaError, ValueError):
    """Operand shapes are incompatible. The message names both shapes."""


class ParameterError(KdudaError, ValueError):
    """A scalar argument or config field is out of its valid range."""


class ConfigError(KdudaError, ValueError):
    """A config file or CLI argument could not be parsed or validated."""


class NumericalAbort(KdudaError, RuntimeError):
    """Training produced a non-finite loss. Message names the term and epoch."""
