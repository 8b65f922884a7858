"""Exception hierarchy shared by every module.

Each error class carries the exit code the CLI uses when it escapes a command.
"""


class ACMIMLLNError(Exception):
    exit_code = 1


class ConfigError(ACMIMLLNError, ValueError):
    exit_code = 2


class ContractError(ACMIMLLNError, ValueError):
    """A caller violated an operation's precondition."""

    exit_code = 2


class DimensionError(ContractError):
    """Tensor shapes are incompatible for the requested operation."""


class DataError(ACMIMLLNError, ValueError):
    exit_code = 3


class TrainingDivergence(ACMIMLLNError, RuntimeError):
    exit_code = 4

    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value
