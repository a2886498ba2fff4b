"""Exception hierarchy shared across the package."""


class NabkitError(Exception):
    """Base class for all package errors."""


class ArgumentError(NabkitError, ValueError):
    """An argument violates a documented precondition."""


class DataLoadError(NabkitError):
    """A dataset could not be loaded (missing files, unknown name)."""


class IntegrityError(NabkitError):
    """A stored record failed its checksum."""


class FormatError(NabkitError):
    """A container file is truncated, corrupt, or has an unsupported version."""


class StateError(NabkitError):
    """An object is not in the required state (e.g. untrained model)."""


class TrainingDivergedError(NabkitError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


class UndefinedMetricError(NabkitError):
    """A metric was requested over an empty denominator."""


class ConfigError(NabkitError):
    """An experiment config is malformed or contains unknown keys."""


class ReportError(NabkitError):
    """A run directory is missing the artifacts needed for reporting."""


class StageError(NabkitError):
    """A pipeline stage failed; carries the stage name, chains the cause."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
