"""
Error types shared by every translator module.

All failures surface as XTableError with an ErrorKind so callers (sync-core,
the CLI) can branch on the kind instead of parsing messages.
"""
from enum import Enum
from typing import NoReturn, Optional


class ErrorKind(str, Enum):
    """Error codes raised across the translator."""

    # internal-model
    REMOVED_NOT_LIVE = "REMOVED_NOT_LIVE"
    DUPLICATE_ADD = "DUPLICATE_ADD"

    # storage
    MALFORMED_URI = "MALFORMED_URI"
    IO_FAILURE = "IO_FAILURE"
    NOT_FOUND = "NOT_FOUND"
    UNSUPPORTED_SCHEME = "UNSUPPORTED_SCHEME"
    INJECTED_FAULT = "INJECTED_FAULT"

    # format readers / writers
    NO_TABLE = "NO_TABLE"
    TABLE_EXISTS = "TABLE_EXISTS"
    GAP_IN_LOG = "GAP_IN_LOG"
    MALFORMED_ACTION = "MALFORMED_ACTION"
    VERSION_AHEAD = "VERSION_AHEAD"
    CONCURRENT_COMMIT = "CONCURRENT_COMMIT"
    INVALID_CHANGE = "INVALID_CHANGE"
    DANGLING_POINTER = "DANGLING_POINTER"
    MALFORMED_METADATA = "MALFORMED_METADATA"
    SNAPSHOT_EXPIRED = "SNAPSHOT_EXPIRED"
    MALFORMED_TIMELINE = "MALFORMED_TIMELINE"
    INSTANT_NOT_FOUND = "INSTANT_NOT_FOUND"
    UNPAIRABLE_REMOVE = "UNPAIRABLE_REMOVE"

    # sync-core
    SOURCE_UNREADABLE = "SOURCE_UNREADABLE"
    PUBLISH_CONFLICT = "PUBLISH_CONFLICT"
    STATE_IO_FAILURE = "STATE_IO_FAILURE"
    DATA_READ_VIOLATION = "DATA_READ_VIOLATION"

    # cli / harness
    CONFIG_INVALID = "CONFIG_INVALID"
    MISSING_DATA_FILE = "MISSING_DATA_FILE"


class XTableError(Exception):
    """A translator failure tagged with its ErrorKind."""

    def __init__(self, message: str, *, kind: ErrorKind):
        super().__init__(message)
        self.kind = kind

    def __str__(self) -> str:
        return f"[{self.kind.value}] {self.args[0]}"


class InjectedCrash(XTableError):
    """Raised by the fault-injecting storage at a planned write."""

    def __init__(self, message: str):
        super().__init__(message, kind=ErrorKind.INJECTED_FAULT)


def raise_error(message: str, *, kind: ErrorKind, exc: Optional[Exception] = None) -> NoReturn:
    """Raise XTableError, chaining the original exception when given."""
    error = XTableError(message, kind=kind)
    if exc is None:
        raise error
    raise error from exc
