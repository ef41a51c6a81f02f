"""Exception hierarchy shared by all modules."""


class ImpulseRakeError(Exception):
    """Base class for library errors."""


class ConfigError(ImpulseRakeError, ValueError):
    """Invalid or inconsistent configuration."""

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors) if errors else [message]


class StructureError(ImpulseRakeError, ValueError):
    """Array shapes or lengths that do not fit together."""


class EventError(ImpulseRakeError, ValueError):
    """A malformed event record; ``index`` points at the offending record."""

    def __init__(self, message, index):
        super().__init__(f"record {index}: {message}")
        self.index = index


class NumericalError(ImpulseRakeError, ArithmeticError):
    """A quantity that would be infinite or undefined (zero power, zero variance)."""


class EstimationError(ImpulseRakeError, RuntimeError):
    """Not enough data to estimate a quantity."""


class TrainingError(ImpulseRakeError, RuntimeError):
    """Training diverged."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history else []


class WeightFormatError(ImpulseRakeError, ValueError):
    """A weight blob that cannot be decoded into the target network."""
