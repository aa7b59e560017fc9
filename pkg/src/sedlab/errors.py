"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with arguments that violate its contract."""


class ConfigError(ValueError):
    """A run configuration is malformed (unknown key, bad value, bad combination)."""


class CheckpointError(IOError):
    """A checkpoint file is malformed, truncated, or inconsistent with the model."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at training step {step}")
