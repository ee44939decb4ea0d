"""Exception hierarchy shared across the package."""


class DacalError(Exception):
    """Base class for all package errors."""


class ChannelMismatchError(DacalError, ValueError):
    pass


class ShapeError(DacalError, ValueError):
    pass


class ScaleError(DacalError, ValueError):
    """Image too small for the requested number of MS-SSIM scales."""


class DomainError(DacalError, ValueError):
    pass


class OrthogonalityError(DacalError, ValueError):
    pass


class ConfigurationError(DacalError, ValueError):
    pass


class StagingError(DacalError, RuntimeError):
    """A training stage was requested without its prerequisite checkpoint."""


class DivergenceError(DacalError, RuntimeError):
    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class DataError(DacalError, ValueError):
    pass


class ManifestError(DataError):
    pass


class CheckpointError(DacalError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass
