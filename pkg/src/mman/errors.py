"""Exception hierarchy shared across the package."""


class MMANError(Exception):
    """Base class for all package errors."""


class DimensionError(MMANError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(MMANError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(MMANError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(MMANError):
    """Input data is missing, malformed or insufficient."""


class NumericalError(MMANError, FloatingPointError):
    """A non-finite value appeared during training or evaluation."""


class TrainingDiverged(NumericalError):
    """Loss became non-finite; carries the last parameters known to be good."""

    def __init__(self, message, last_good=None, epoch=None):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch
