"""Exception hierarchy shared across the engine.

The CLI maps these onto process exit codes: validation/configuration
problems exit 2, IO problems exit 3, numeric failures exit 4.
"""


class MotionDiffuseError(Exception):
    """Base class for all engine errors."""


class ConfigurationError(MotionDiffuseError):
    """Invalid configuration value or incompatible option combination."""


class DimensionError(MotionDiffuseError):
    """Tensor shape mismatch between related inputs."""


class CapacityError(MotionDiffuseError):
    """Requested size exceeds a configured maximum."""


class ValidationError(MotionDiffuseError):
    """Input fails a numerical validity check (e.g. non-rotation matrix)."""


class ParseError(MotionDiffuseError):
    """Malformed file content; message carries location diagnostics."""


class NumericError(MotionDiffuseError):
    """Non-finite values or numerically impossible state mid-computation."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class CheckpointError(MotionDiffuseError):
    """Checkpoint missing, corrupt, or of an incompatible version."""
