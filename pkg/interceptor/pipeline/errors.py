"""Exception hierarchy for the controller-initialization pipeline."""

from typing import Optional


class LyapunovInitError(Exception):
    """Base class for every error raised by the pipeline package."""


class InvalidInputError(LyapunovInitError, ValueError):
    """Non-finite or malformed numeric input."""


class DomainError(LyapunovInitError, ValueError):
    """Input outside the domain of the model (e.g. c_z <= 0)."""


class SingularityError(DomainError):
    """Strapdown-to-gimbal pitch correction too close to the tangent singularity."""


class DegenerateStateError(DomainError):
    """Closed-form solve requested at a zero image coordinate, where D is identically 0."""


class InfeasibleInputError(LyapunovInitError, RuntimeError):
    """No control input inside the bounds achieves D < 0."""

    def __init__(self, message: str, best_u: float, best_d: float):
        super().__init__(message)
        self.best_u = best_u
        self.best_d = best_d


class ConfigError(LyapunovInitError, ValueError):
    """Configuration rejected outside of pydantic validation."""


class TrainingDivergedError(LyapunovInitError, RuntimeError):
    """Loss became non-finite during training."""

    def __init__(self, message: str, epoch: int, batch: int, last_finite_loss: Optional[float]):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.last_finite_loss = last_finite_loss


class ModelFileError(LyapunovInitError, OSError):
    """Model file could not be used."""


class ModelVersionError(ModelFileError):
    """Model file written with an unsupported schema version."""


class CorruptModelError(ModelFileError):
    """Model file truncated or structurally invalid."""


class QualityGateError(LyapunovInitError, RuntimeError):
    """A pipeline stage finished but its result exceeds a configured threshold."""
