"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ConfigError(ValueError):
    """Invalid configuration value, flag, or config file."""


class ParseError(ValueError):
    """Malformed cohort file; message carries file and line."""

    def __init__(self, message, path=None, line=None):
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class UndefinedMetricError(ValueError):
    """Metric is undefined for the given inputs (e.g. single-class AUROC)."""


class CheckpointError(ValueError):
    """Checkpoint file is corrupt or structurally invalid."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class TrainingError(RuntimeError):
    """Training aborted (e.g. non-finite loss)."""


class GradientCheckError(RuntimeError):
    """Finite-difference gradient check could not be evaluated."""
