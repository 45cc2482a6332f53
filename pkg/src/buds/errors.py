"""Exception types shared across the toolkit."""


class BudsError(Exception):
    """Base class for all toolkit errors."""


class FormatError(BudsError):
    """A demo directory or manifest does not follow the on-disk format."""


class CorruptData(BudsError):
    """A binary blob disagrees with the manifest (missing or wrong length)."""


class IoError(BudsError):
    """Filesystem failure while reading or writing an artifact."""


class ShapeError(BudsError):
    """Array dimensions do not match the model or operation contract."""


class EmptyInput(BudsError):
    """An operation that requires at least one element received none."""


class DivergenceError(BudsError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class TooFewSegments(BudsError):
    """Fewer segments than requested clusters."""


class DegenerateAffinity(BudsError):
    """A point is isolated: all its off-diagonal affinities underflowed."""


class EmptyDataset(BudsError):
    """A training routine received an empty dataset."""


class ScriptFailure(BudsError):
    """A scripted demonstration did not reach the goal within its step budget."""


class StageDependencyError(BudsError):
    """A pipeline stage is missing a prerequisite artifact."""

    def __init__(self, artifact: str):
        self.artifact = artifact
        super().__init__(f"missing prerequisite artifact: {artifact}")


class ConfigError(BudsError):
    """A pipeline config is invalid; `field` is the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
