"""Exception types shared across the pipeline.

Exit-code mapping (see cli.main): UsageError -> 1, DataFormatError -> 2,
TransportError -> 3.
"""


class NoteMatchError(Exception):
    """Base class for pipeline errors."""


class UsageError(NoteMatchError):
    """Bad invocation: missing files, invalid flag combinations."""


class DataFormatError(NoteMatchError):
    """Malformed input data: JSONL lines, cache files, config documents."""


class TransportError(NoteMatchError):
    """Sidecar connection or protocol failure."""

    def __init__(self, message: str, retries: int = 0):
        super().__init__(message)
        self.retries = retries
