"""Exception hierarchy shared by all modules."""


class DeepMVCError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(DeepMVCError, ValueError):
    """Operand shapes are incompatible."""


class ContractViolation(DeepMVCError, ValueError):
    """A documented precondition does not hold."""


class DegenerateInputError(DeepMVCError, ValueError):
    """Input is well-formed but numerically degenerate (e.g. zero spread)."""


class ConfigurationError(DeepMVCError, ValueError):
    """An instance or experiment configuration is inconsistent."""


class GenerationError(DeepMVCError, RuntimeError):
    """A synthetic dataset could not be generated with the given constraints."""


class FormatError(DeepMVCError, ValueError):
    """A serialized file is malformed.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class TrainingError(DeepMVCError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int, components: dict):
        detail = ", ".join(f"{k}={v!r}" for k, v in components.items())
        super().__init__(f"{message} at epoch {epoch} [{detail}]")
        self.epoch = epoch
        self.components = dict(components)
