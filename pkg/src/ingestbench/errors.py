"""Exception hierarchy shared across the package."""

from __future__ import annotations


class IngestBenchError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(IngestBenchError, ValueError):
    """A caller-supplied parameter is out of its valid range."""


class NotFound(IngestBenchError):
    """A file is missing under a storage tier root."""

    def __init__(self, relpath: str, message: str | None = None):
        super().__init__(message or f"not found: {relpath}")
        self.relpath = relpath


class IoError(IngestBenchError):
    """An underlying filesystem operation failed."""

    def __init__(self, relpath: str, message: str | None = None):
        super().__init__(message or f"I/O failure on {relpath}")
        self.relpath = relpath


class QuotaExceeded(IoError):
    """A write would exceed the tier's configured capacity cap."""


class ElementError(IngestBenchError):
    """Per-element processing failure inside a pipeline stage.

    Carries the source position of the element that failed; absorbed by an
    ignore-errors stage, otherwise surfaces at the consuming call.
    """

    def __init__(self, seq_id: int, message: str | None = None):
        super().__init__(message or f"element {seq_id} failed")
        self.seq_id = seq_id
        self.batch_index: int | None = None


class DecodeError(IngestBenchError):
    """Malformed image container: bad magic, truncation, or checksum mismatch."""


class IncompleteCheckpoint(IngestBenchError):
    """One or more of the checkpoint's three files is missing."""


class CorruptCheckpoint(IngestBenchError):
    """Checkpoint files are present but internally inconsistent."""
