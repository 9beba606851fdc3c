"""Exception hierarchy shared by all patchguard modules."""


class PatchguardError(Exception):
    """Base class for all library errors."""


class ConfigError(PatchguardError):
    """Invalid model/run configuration (bad dims, odd channel count, ...)."""


class ArchiveError(PatchguardError):
    """Base class for embedding-archive format errors."""


class CorruptHeaderError(ArchiveError):
    pass


class TruncatedPayloadError(ArchiveError):
    pass


class DimensionMismatchError(ArchiveError):
    pass


class NonFiniteValueError(ArchiveError):
    pass


class CannotSplitError(PatchguardError):
    """Train set too small to carve out a validation part."""


class NumericOverflowError(PatchguardError):
    """Non-finite intermediate value during a model forward/backward pass."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TrainingAbortedError(PatchguardError):
    """Training run aborted by a numeric failure; records the epoch."""

    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


class UndefinedMetricError(PatchguardError):
    """Metric is undefined for the given inputs (e.g. single-class labels)."""
