"""
Common surface of the format readers/writers

Each format module implements FormatClient over a Storage and a table base
path. Parsed metadata documents are memoized per client instance; a client
lives for one sync run, so immutable files are read at most once per run.
"""
from __future__ import annotations

import json
import logging
import random
import uuid
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Mapping, Optional
from urllib.parse import unquote

from config import make_rng
from errors import ErrorKind, XTableError
from internal_model import (
    NULL_TOKEN,
    FormatCommitId,
    InternalSchema,
    InternalSnapshot,
    TableChange,
    TableFormat,
)
from storage import Storage, StoragePath, WriteOutcome
from utils import canonical_json_bytes, redact_secrets

logger = logging.getLogger(__name__)

# Hive-style directory name for a null partition value
HIVE_NULL_PARTITION = "__HIVE_DEFAULT_PARTITION__"


@dataclass(frozen=True)
class CommitRecord:
    """One entry of a table's commit history, as shown by inspect."""

    token: str
    timestamp_ms: int
    operation: str
    source_tag: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "token": self.token,
            "timestamp_ms": self.timestamp_ms,
            "operation": self.operation,
            "source_tag": self.source_tag,
        }


# Characters Hive percent-encodes in partition directory names
_HIVE_ESCAPED = frozenset('"#%\'*/:=?\\{[]^\x7f') | frozenset(chr(c) for c in range(0x20))


def escape_partition_value(value: str) -> str:
    """Hive path escaping; a literal null-directory name is escaped so it reads back as itself."""
    escaped = "".join(f"%{ord(ch):02X}" if ch in _HIVE_ESCAPED else ch for ch in value)
    if escaped == HIVE_NULL_PARTITION:
        return "%5F" + escaped[1:]
    return escaped


def unescape_partition_value(text: str) -> str:
    return unquote(text)


def hive_partition_path(columns: list[str], values: Mapping[str, str]) -> str:
    """``col=value/col2=value2`` with the hive null directory for null values."""
    segments = []
    for column in columns:
        value = values.get(column, NULL_TOKEN)
        value = HIVE_NULL_PARTITION if value == NULL_TOKEN else escape_partition_value(value)
        segments.append(f"{escape_partition_value(column)}={value}")
    return "/".join(segments)


def parse_hive_partition_path(partition_path: str, columns: list[str]) -> dict[str, str]:
    """Inverse of hive_partition_path; bare segments are matched to columns by position."""
    values: dict[str, str] = {}
    if not partition_path:
        return values
    for position, segment in enumerate(partition_path.split("/")):
        name, sep, value = segment.partition("=")
        if not sep:
            if position >= len(columns):
                continue
            name, value = columns[position], segment
        else:
            name = unescape_partition_value(name)
        values[name] = NULL_TOKEN if value == HIVE_NULL_PARTITION else unescape_partition_value(value)
    return values


class FormatClient(ABC):
    """Source reader and target writer for one table format at one base path."""

    format: TableFormat
    metadata_dir: str

    def __init__(self, storage: Storage, base: StoragePath, rng: Optional[random.Random] = None):
        self.storage = storage
        self.base = base
        self.rng = rng or make_rng()
        self._cache: dict[str, Any] = {}
        storage.stats.register_data_root(base)

    @property
    def metadata_path(self) -> StoragePath:
        return self.base.join(self.metadata_dir)

    def commit_id(self, token: str) -> FormatCommitId:
        return FormatCommitId(self.format, token)

    def new_uuid(self) -> str:
        return str(uuid.UUID(int=self.rng.getrandbits(128), version=4))

    # ------------------------------------------------------------------
    # Metadata I/O helpers
    # ------------------------------------------------------------------

    def _read_json(self, path: StoragePath, *, kind: ErrorKind, cache: bool = True) -> Any:
        key = str(path)
        if cache and key in self._cache:
            return self._cache[key]
        raw = self.storage.read_file(path)
        try:
            doc = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise XTableError(f"cannot parse {redact_secrets(key)}: {exc}", kind=kind) from exc
        if cache:
            self._cache[key] = doc
        return doc

    def _publish(self, path: StoragePath, payload: bytes) -> None:
        """put_if_absent; losing the race is a concurrent commit."""
        if self.storage.put_if_absent(path, payload) is WriteOutcome.ALREADY_EXISTS:
            raise XTableError(
                f"{self.format.value} commit lost the race for {redact_secrets(str(path))}",
                kind=ErrorKind.CONCURRENT_COMMIT,
            )

    def _publish_json(self, path: StoragePath, doc: Any) -> None:
        self._publish(path, canonical_json_bytes(doc))

    # ------------------------------------------------------------------
    # Format surface
    # ------------------------------------------------------------------

    @abstractmethod
    def exists(self) -> bool:
        """True when this format's root metadata is present at the base path."""

    @abstractmethod
    def init(self, table: InternalSnapshot) -> None:
        """Create an empty table with the snapshot's schema, partition spec and name."""

    @abstractmethod
    def read_snapshot(self, as_of: Optional[str] = None) -> InternalSnapshot:
        """Table state at the latest commit, or as of a commit token."""

    @abstractmethod
    def read_changes_since(self, after: Optional[str], schema_hint: Optional[InternalSchema] = None) -> list[TableChange]:
        """One TableChange per commit after *after*, oldest first."""

    @abstractmethod
    def write_change(self, change: TableChange, source_tag: Optional[str] = None) -> str:
        """Publish one commit; returns its token."""

    @abstractmethod
    def read_source_tags(self) -> dict[str, str]:
        """Own commit token -> source tag, for commits written by the translator."""

    @abstractmethod
    def commit_history(self) -> list[CommitRecord]:
        """Every commit, table creation first."""

    @abstractmethod
    def latest_token(self) -> str:
        """Token of the newest commit (the creation token for an empty table)."""

    @abstractmethod
    def earliest_token(self) -> str:
        """Token that denotes the freshly created, empty table."""

    @abstractmethod
    def table_name(self) -> str:
        """Table name recorded in the metadata."""

    def source_tag_index(self) -> dict[str, str]:
        """Source tag -> own commit token."""
        return {tag: token for token, tag in self.read_source_tags().items()}

    def commit_count(self) -> int:
        """Data commits, table creation excluded."""
        return len(self.commit_history()) - 1


def get_format_client(
    table_format: TableFormat,
    storage: Storage,
    base: StoragePath,
    rng: Optional[random.Random] = None,
) -> FormatClient:
    """Factory for the client of *table_format* at *base*."""
    if table_format is TableFormat.DELTA:
        from format_delta import DeltaClient
        return DeltaClient(storage, base, rng)
    if table_format is TableFormat.ICEBERG:
        from format_iceberg import IcebergClient
        return IcebergClient(storage, base, rng)
    if table_format is TableFormat.HUDI:
        from format_hudi import HudiClient
        return HudiClient(storage, base, rng)
    raise ValueError(f"unsupported table format {table_format!r}")
