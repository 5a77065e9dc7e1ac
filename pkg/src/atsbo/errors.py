"""Exception types shared across the library."""


class AtsboError(Exception):
    """Base class for all library-specific errors."""


class ConfigError(AtsboError, ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(AtsboError, RuntimeError):
    """Linear-algebra failure that survived the nugget-escalation schedule."""

    def __init__(self, message: str, nugget: float | None = None):
        super().__init__(message)
        self.nugget = nugget


class InitializationError(AtsboError, RuntimeError):
    """No finite-density starting point could be found for the sampler."""


class StateFileError(AtsboError, ValueError):
    """Ask/tell state file is missing, corrupt, or incomplete."""


class StateMismatchError(AtsboError, RuntimeError):
    """Reported evaluations do not match the pending batch."""
