"""Exception types shared across the package."""


class DGGANError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DGGANError):
    """Invalid or unparseable experiment configuration.

    ``key`` holds the dotted path of the offending entry when known.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class LayoutMismatchError(DGGANError):
    pass


class RecordError(DGGANError):
    """A dataset record could not be read."""

    def __init__(self, record_id, message):
        super().__init__(f"record {record_id!r}: {message}")
        self.record_id = record_id


class DegenerateDepthError(DGGANError):
    pass


class EmptyPoolError(DGGANError):
    pass


class ShapeError(DGGANError, ValueError):
    pass


class MissingDepthError(DGGANError):
    pass


class MissingInitError(DGGANError):
    pass


class CheckpointError(DGGANError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


class CoverageError(DGGANError, ValueError):
    """Threshold curve does not span the integration interval."""
