"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or layer geometry does not line up."""


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


class ConfigurationError(ValueError):
    """A model spec, run config, or synth config violates an invariant."""


class DataError(ValueError):
    """A data file could not be ingested or does not match expectations."""


class TrainingDiverged(RuntimeError):
    """A non-finite loss appeared during training."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
