"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ConfigError(ValueError):
    """A configuration value is out of its valid range."""


class StructureError(ValueError):
    """A graph or segment structure violates a structural precondition."""


class DegenerateBatchError(ValueError):
    """Batch statistics are undefined (fewer than two rows in train mode)."""


class NumericError(ArithmeticError):
    """A forward value left the domain of the requested operation."""


class PairFormatError(ValueError):
    """A pair file could not be parsed; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CheckpointFormatError(ValueError):
    """A checkpoint manifest or payload is malformed."""


class GradCheckError(RuntimeError):
    """The finite-difference check hit a non-finite forward value."""


class TrainingDivergedError(RuntimeError):
    """The training loss became non-finite."""

    def __init__(self, epoch: int, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
