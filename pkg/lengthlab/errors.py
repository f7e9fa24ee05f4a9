#
# Exceptions raised by lengthlab
#


class LabError(Exception):
    """Base class for every lengthlab error."""


class ConfigError(LabError, ValueError):
    """An experiment document or config field is invalid."""


class DivergenceError(LabError, RuntimeError):
    """Training produced a non-finite loss or parameter."""


class ProblemSetError(LabError, RuntimeError):
    """A problem difficulty class could not be constructed."""
