"""Exception hierarchy. Every error raised by the package derives from CDiffError."""


class CDiffError(Exception):
    pass


class InvalidInputError(CDiffError, ValueError):
    """Non-finite or otherwise malformed numeric input."""


class ShapeError(CDiffError, ValueError):
    pass


class SizeError(ShapeError):
    """Image too small for the requested operation (e.g. SSIM window)."""


class DegenerateReferenceError(CDiffError, ValueError):
    pass


class StepIndexError(CDiffError, IndexError):
    pass


class DomainError(CDiffError, ValueError):
    pass


class ConfigurationError(CDiffError, ValueError):
    pass


class UnsupportedRateError(ConfigurationError):
    """Task sampling rate lies below the most degraded step of the schedule."""


class StateError(CDiffError, RuntimeError):
    pass


class TrainingDivergedError(CDiffError, RuntimeError):
    def __init__(self, message: str, step: int | None = None, checkpoint=None):
        super().__init__(message)
        self.step = step
        # last finite checkpoint, kept so callers can persist a partial result
        self.checkpoint = checkpoint


class FormatError(CDiffError, ValueError):
    """Binary file with a wrong magic, version or truncated payload."""
