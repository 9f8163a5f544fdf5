"""Exception hierarchy shared by the library and the CLI."""


class XrmdnError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(XrmdnError, ValueError):
    """Invalid dimensions, hyperparameters, profiles or mismatched widths."""

    exit_code = 2


class DataError(XrmdnError, ValueError):
    """Dataset is too short, unparsable, or violates its schema."""

    exit_code = 3


class InvalidInputError(XrmdnError, ValueError):
    """Empty or non-finite arguments to a numeric primitive."""

    exit_code = 2


class DomainError(XrmdnError, ValueError):
    """Argument outside the mathematical domain of the function."""

    exit_code = 4


class NumericalError(XrmdnError, ArithmeticError):
    """A numerical procedure could not produce a usable result."""

    exit_code = 4


class TrainingDivergedError(NumericalError):
    """Loss or gradient became non-finite during training."""

    def __init__(self, epoch: int, batch: int, detail: str = "non-finite loss"):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}: {detail}")
