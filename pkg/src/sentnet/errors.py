"""Error taxonomy shared across the package.

Every failure mode maps to one of these so the CLI can translate
exceptions into stable exit codes (usage=1, data=2, divergence=3).
"""


class SentnetError(Exception):
    """Base class for all package errors."""


class ShapeError(SentnetError):
    """Tensor shapes or hyperparameters are inconsistent."""


class ConfigError(SentnetError):
    """Invalid configuration or argument combination."""


class DataError(SentnetError):
    """Malformed manifest, image file, or dataset constraint violation."""


class CheckpointError(DataError):
    """Checkpoint file cannot be read or does not match the network."""


class CheckpointFormatError(CheckpointError):
    """Bad magic, bad version, or structurally invalid checkpoint bytes."""


class CheckpointTruncatedError(CheckpointFormatError):
    """Checkpoint file ends before the declared payload."""


class CheckpointMismatchError(CheckpointError):
    """Checkpoint tensors do not match the network spec."""


class SurgeryError(SentnetError):
    """Surgery plan is invalid for the given spec or checkpoint."""


class DivergenceError(SentnetError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, detail: str | None = None):
        self.epoch = epoch
        message = f"training diverged at epoch {epoch}: loss is not finite"
        if detail:
            message = f"training diverged at epoch {epoch}: {detail}"
        super().__init__(message)
