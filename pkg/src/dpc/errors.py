"""Exception types shared across the package."""


class DPCError(Exception):
    """Base class for all package errors."""


class DimensionError(DPCError, ValueError):
    """Operand shapes are incompatible."""


class RowIndexError(DPCError, IndexError):
    """A row range falls outside a tensor."""


class ContractError(DPCError):
    """A caller violated an operation's precondition."""


class NonFiniteError(DPCError, ValueError):
    """NaN or Inf reached an operation that requires finite input."""


class ConfigError(DPCError, ValueError):
    """Invalid configuration value.

    ``key`` carries the dotted path of the offending entry when known.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class TrainingError(DPCError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
        self.epoch = epoch
