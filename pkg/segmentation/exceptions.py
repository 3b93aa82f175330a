"""Error types raised across the segmentation app."""


class SegmentationError(Exception):
    """Base class for every error raised by the segmentation app."""


class DataValidationError(SegmentationError, ValueError):
    """A value violates a domain invariant (shape, range, disjointness...)."""


class ConfigError(DataValidationError):
    """A configuration file or override failed schema validation."""

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = errors or {}


class SequenceIOError(SegmentationError, OSError):
    """A dataset file is missing, unreadable or unwritable."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class FlowFormatError(SequenceIOError):
    """A ``.flo`` file has a bad magic tag or a truncated payload."""


class PipelineError(SegmentationError):
    """Inference could not obtain a cue for a frame."""

    def __init__(self, message, frame_index=None):
        super().__init__(message)
        self.frame_index = frame_index


class NonFiniteLossError(SegmentationError):
    """Training produced (or was fed) non-finite values; the batch was dumped."""

    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
