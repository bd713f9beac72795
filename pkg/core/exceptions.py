"""
Exception hierarchy for the toolkit. Each class carries the CLI exit code it maps to.
"""


class MechanismToolkitError(Exception):
    """Base class for every error raised by the toolkit."""

    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigurationError(MechanismToolkitError, ValueError):
    """Invalid parameters, dimension mismatches or unknown names."""

    exit_code = 2


class InstanceError(ConfigurationError):
    """An instance constructor was asked for parameters outside its valid range."""


class BudgetExceededError(MechanismToolkitError):
    """An enumeration or symbolic computation would exceed the configured budget."""

    exit_code = 3

    def __init__(self, message: str, requested: int = 0, limit: int = 0):
        super().__init__(message)
        self.requested = requested
        self.limit = limit


class InternalConsistencyError(MechanismToolkitError, RuntimeError):
    """Two independent computations of the same quantity disagree."""


class DegenerateFitError(MechanismToolkitError, ValueError):
    """A scaling fit has too few usable points."""
