"""Exception types raised across the pipeline."""

from __future__ import annotations


class TWNidsError(Exception):
    """Base class for all package errors."""


class SchemaError(TWNidsError, ValueError):
    """A dataset schema is invalid or does not match the input file."""

    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class RowError(TWNidsError, ValueError):
    """A single input row could not be parsed or validated."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class OrderingError(TWNidsError, ValueError):
    """Flow records are not sorted by non-decreasing timestamp."""

    def __init__(self, index: int, previous: float, current: float):
        super().__init__(
            f"record {index} has timestamp {current!r} earlier than the preceding {previous!r}"
        )
        self.index = index


class ConfigError(TWNidsError, ValueError):
    """Invalid configuration value."""


class ProtocolError(TWNidsError, ValueError):
    """An experiment protocol cannot be run on the given datasets."""


class CheckpointError(TWNidsError, ValueError):
    """A checkpoint file is malformed or incompatible."""
