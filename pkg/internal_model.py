"""
Format-neutral internal representation

Every source reader produces these types and every target writer consumes
them, so no format ever talks to another directly. All types are frozen
values; the functions here are pure and safe to call from any thread.
"""
from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, replace
from datetime import date, datetime
from enum import Enum
from functools import total_ordering
from typing import Any, Iterable, Mapping, Optional

import pytz
from dateutil import parser as date_parser

from config import METADATA_DIRS
from errors import ErrorKind, XTableError
from utils import canonical_json

# Null partition value sentinel shared by all formats at the exchange layer
NULL_TOKEN = "__null__"

IDENTITY = "IDENTITY"

INT32_RANGE = (-(2 ** 31), 2 ** 31 - 1)
INT64_RANGE = (-(2 ** 63), 2 ** 63 - 1)

_RE_CANONICAL_INT = re.compile(r"-?(0|[1-9][0-9]*)")
_RE_CANONICAL_TS = re.compile(r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}\.\d{6}Z")


class TableFormat(str, Enum):
    DELTA = "DELTA"
    ICEBERG = "ICEBERG"
    HUDI = "HUDI"

    @classmethod
    def parse(cls, raw: str) -> "TableFormat":
        """Case-insensitive lookup; raises ValueError for unknown names."""
        try:
            return cls(raw.strip().upper())
        except ValueError:
            valid = ", ".join(f.value for f in cls)
            raise ValueError(f"unknown table format {raw!r} (expected one of {valid})") from None


class FieldType(str, Enum):
    BOOL = "BOOL"
    INT32 = "INT32"
    INT64 = "INT64"
    FLOAT64 = "FLOAT64"
    STRING = "STRING"
    DATE = "DATE"
    TIMESTAMP_MICROS = "TIMESTAMP_MICROS"


class Operation(str, Enum):
    """Format-neutral label of what a commit did."""

    APPEND = "APPEND"
    DELETE = "DELETE"
    OVERWRITE = "OVERWRITE"
    SCHEMA_CHANGE = "SCHEMA_CHANGE"


# =============================================================================
# Canonical value encodings
# =============================================================================

def render_value(field_type: FieldType, value: Any) -> str:
    """
    Render a typed value in its canonical string form.

    None renders as the null token. Raises ValueError when the value does
    not belong to the type's domain.
    """
    if value is None:
        return NULL_TOKEN

    if field_type is FieldType.BOOL:
        if not isinstance(value, bool):
            raise ValueError(f"BOOL value expected, got {value!r}")
        return "true" if value else "false"

    if field_type in (FieldType.INT32, FieldType.INT64):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{field_type.value} value expected, got {value!r}")
        low, high = INT32_RANGE if field_type is FieldType.INT32 else INT64_RANGE
        if not low <= value <= high:
            raise ValueError(f"{value} out of {field_type.value} range")
        return str(value)

    if field_type is FieldType.FLOAT64:
        value = float(value)
        if math.isnan(value):
            return "NaN"
        if math.isinf(value):
            return "Infinity" if value > 0 else "-Infinity"
        return repr(value)

    if field_type is FieldType.STRING:
        if not isinstance(value, str):
            raise ValueError(f"STRING value expected, got {value!r}")
        return value

    if field_type is FieldType.DATE:
        if isinstance(value, datetime) or not isinstance(value, date):
            raise ValueError(f"DATE value expected, got {value!r}")
        return value.isoformat()

    if field_type is FieldType.TIMESTAMP_MICROS:
        if not isinstance(value, datetime) or value.tzinfo is None:
            raise ValueError(f"timezone-aware datetime expected, got {value!r}")
        v = value.astimezone(pytz.UTC)
        # strftime does not zero-pad years below 1000 on every platform
        return (
            f"{v.year:04d}-{v.month:02d}-{v.day:02d}T"
            f"{v.hour:02d}:{v.minute:02d}:{v.second:02d}.{v.microsecond:06d}Z"
        )

    raise ValueError(f"unsupported field type {field_type!r}")


def parse_value(field_type: FieldType, text: str) -> Any:
    """Inverse of render_value. Raises ValueError on non-canonical input."""
    if text == NULL_TOKEN:
        return None

    if field_type is FieldType.BOOL:
        if text == "true":
            return True
        if text == "false":
            return False
        raise ValueError(f"not a canonical BOOL: {text!r}")

    if field_type in (FieldType.INT32, FieldType.INT64):
        if not _RE_CANONICAL_INT.fullmatch(text) or text == "-0":
            raise ValueError(f"not a canonical integer: {text!r}")
        value = int(text)
        low, high = INT32_RANGE if field_type is FieldType.INT32 else INT64_RANGE
        if not low <= value <= high:
            raise ValueError(f"{text} out of {field_type.value} range")
        return value

    if field_type is FieldType.FLOAT64:
        if text == "NaN":
            return math.nan
        if text == "Infinity":
            return math.inf
        if text == "-Infinity":
            return -math.inf
        value = float(text)
        if math.isnan(value) or math.isinf(value):
            raise ValueError(f"not a canonical FLOAT64: {text!r}")
        return value

    if field_type is FieldType.STRING:
        return text

    if field_type is FieldType.DATE:
        if len(text) != 10:
            raise ValueError(f"not a canonical DATE: {text!r}")
        return date.fromisoformat(text)

    if field_type is FieldType.TIMESTAMP_MICROS:
        if not _RE_CANONICAL_TS.fullmatch(text):
            raise ValueError(f"not a canonical TIMESTAMP_MICROS: {text!r}")
        return date_parser.isoparse(text).astimezone(pytz.UTC)

    raise ValueError(f"unsupported field type {field_type!r}")


def value_sort_key(field_type: FieldType, text: str) -> Any:
    """Ordering key of a canonical string under its type's ordering."""
    return parse_value(field_type, text)


# =============================================================================
# Schema
# =============================================================================

@dataclass(frozen=True)
class InternalField:
    field_id: int
    name: str
    type: FieldType
    nullable: bool = True

    def to_dict(self) -> dict:
        return {"fieldId": self.field_id, "name": self.name, "type": self.type.value, "nullable": self.nullable}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "InternalField":
        return cls(
            field_id=int(data["fieldId"]),
            name=str(data["name"]),
            type=FieldType(data["type"]),
            nullable=bool(data.get("nullable", True)),
        )


@dataclass(frozen=True)
class InternalSchema:
    schema_id: int
    fields: tuple[InternalField, ...] = ()

    def __post_init__(self):
        if not isinstance(self.fields, tuple):
            object.__setattr__(self, "fields", tuple(self.fields))

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]

    @property
    def max_field_id(self) -> int:
        return max((f.field_id for f in self.fields), default=0)

    def field_by_id(self, field_id: int) -> Optional[InternalField]:
        for f in self.fields:
            if f.field_id == field_id:
                return f
        return None

    def field_by_name(self, name: str) -> Optional[InternalField]:
        for f in self.fields:
            if f.name == name:
                return f
        return None

    def add_field(self, name: str, field_type: FieldType, nullable: bool = True) -> "InternalSchema":
        """Append a column: next field id, next schema id."""
        new_field = InternalField(self.max_field_id + 1, name, field_type, nullable)
        return InternalSchema(self.schema_id + 1, self.fields + (new_field,))

    def same_fields(self, other: Optional["InternalSchema"]) -> bool:
        return other is not None and self.fields == other.fields

    def to_dict(self) -> dict:
        return {"schemaId": self.schema_id, "fields": [f.to_dict() for f in self.fields]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "InternalSchema":
        return cls(int(data.get("schemaId", 0)), tuple(InternalField.from_dict(f) for f in data["fields"]))

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "InternalSchema":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class InternalPartitionField:
    source_field_id: int
    transform: str = IDENTITY


def partition_spec_for(schema: InternalSchema, columns: Iterable[str]) -> tuple[InternalPartitionField, ...]:
    """Identity partition spec over the named columns."""
    spec = []
    for name in columns:
        f = schema.field_by_name(name)
        if f is None:
            raise XTableError(f"partition column {name!r} not in schema", kind=ErrorKind.INVALID_CHANGE)
        spec.append(InternalPartitionField(f.field_id))
    return tuple(spec)


def partition_column_names(schema: InternalSchema, spec: Iterable[InternalPartitionField]) -> list[str]:
    names = []
    for pf in spec:
        f = schema.field_by_id(pf.source_field_id)
        if f is not None:
            names.append(f.name)
    return names


# =============================================================================
# Data files
# =============================================================================

@dataclass(frozen=True)
class ColumnStat:
    field_id: int
    min: str
    max: str
    null_count: int = 0


@dataclass(frozen=True)
class InternalDataFile:
    """One immutable data file. Set identity is rel_path alone."""

    rel_path: str
    partition_values: tuple[tuple[str, str], ...] = ()
    record_count: int = 0
    file_size_bytes: int = 0
    column_stats: Optional[tuple[ColumnStat, ...]] = None

    def __post_init__(self):
        pv = self.partition_values
        if isinstance(pv, Mapping):
            pv = tuple(sorted((str(k), NULL_TOKEN if v is None else str(v)) for k, v in pv.items()))
            object.__setattr__(self, "partition_values", pv)
        elif not isinstance(pv, tuple):
            object.__setattr__(self, "partition_values", tuple(pv))
        stats = self.column_stats
        if stats is not None and not isinstance(stats, tuple):
            object.__setattr__(self, "column_stats", tuple(sorted(stats, key=lambda s: s.field_id)))

    @property
    def partitions(self) -> dict[str, str]:
        return dict(self.partition_values)

    def stat_for(self, field_id: int) -> Optional[ColumnStat]:
        for stat in self.column_stats or ():
            if stat.field_id == field_id:
                return stat
        return None

    def without_stats(self) -> "InternalDataFile":
        return replace(self, column_stats=None)


def index_by_path(files: Iterable[InternalDataFile]) -> dict[str, InternalDataFile]:
    return {f.rel_path: f for f in files}


def validate_rel_path(rel_path: str) -> Optional[str]:
    """Return a violation message for an illegal data file path, else None."""
    if not rel_path:
        return "empty rel_path"
    if rel_path.startswith("/"):
        return f"{rel_path}: rel_path must not begin with '/'"
    if "\\" in rel_path:
        return f"{rel_path}: rel_path must be forward-slash separated"
    segments = rel_path.split("/")
    if ".." in segments:
        return f"{rel_path}: rel_path must not contain '..'"
    if segments[0] in METADATA_DIRS:
        return f"{rel_path}: rel_path points under metadata directory {segments[0]}/"
    return None


# =============================================================================
# Commits, changes, snapshots
# =============================================================================

def token_sort_key(table_format: TableFormat, token: str) -> str:
    """Delta versions and Iceberg ordinals compare zero-padded; Hudi instants as-is."""
    if table_format is TableFormat.HUDI:
        return token
    return token.zfill(20)


@total_ordering
@dataclass(frozen=True)
class FormatCommitId:
    format: TableFormat
    token: str

    @property
    def sort_key(self) -> str:
        return token_sort_key(self.format, self.token)

    def __lt__(self, other: "FormatCommitId") -> bool:
        if not isinstance(other, FormatCommitId):
            return NotImplemented
        if other.format is not self.format:
            raise TypeError(f"cannot order {self.format.value} and {other.format.value} commit ids")
        return self.sort_key < other.sort_key

    def tag(self) -> str:
        """Source-tag form ``<FORMAT>:<token>``."""
        return f"{self.format.value}:{self.token}"

    @classmethod
    def from_tag(cls, tag: str) -> "FormatCommitId":
        fmt, sep, token = tag.partition(":")
        if not sep:
            raise ValueError(f"malformed source tag {tag!r}")
        return cls(TableFormat.parse(fmt), token)

    def __str__(self) -> str:
        return self.tag()


@dataclass(frozen=True)
class TableChange:
    source_commit: Optional[FormatCommitId]
    timestamp_ms: int
    files_added: frozenset[InternalDataFile] = frozenset()
    files_removed: frozenset[str] = frozenset()
    schema: Optional[InternalSchema] = None
    operation: Operation = Operation.APPEND

    def __post_init__(self):
        if not isinstance(self.files_added, frozenset):
            object.__setattr__(self, "files_added", frozenset(self.files_added))
        if not isinstance(self.files_removed, frozenset):
            object.__setattr__(self, "files_removed", frozenset(self.files_removed))

    @property
    def added_paths(self) -> set[str]:
        return {f.rel_path for f in self.files_added}

    @property
    def is_empty(self) -> bool:
        return not self.files_added and not self.files_removed


@dataclass(frozen=True)
class InternalSnapshot:
    source_commit: Optional[FormatCommitId]
    timestamp_ms: int
    schema: InternalSchema
    partition_spec: tuple[InternalPartitionField, ...] = ()
    live_files: frozenset[InternalDataFile] = frozenset()
    table_name: str = ""

    def __post_init__(self):
        if not isinstance(self.partition_spec, tuple):
            object.__setattr__(self, "partition_spec", tuple(self.partition_spec))
        if not isinstance(self.live_files, frozenset):
            object.__setattr__(self, "live_files", frozenset(self.live_files))

    @property
    def partition_columns(self) -> list[str]:
        return partition_column_names(self.schema, self.partition_spec)

    def files_by_path(self) -> dict[str, InternalDataFile]:
        return index_by_path(self.live_files)

    def with_live_files(self, files: Iterable[InternalDataFile]) -> "InternalSnapshot":
        return replace(self, live_files=frozenset(files))


# =============================================================================
# Operations
# =============================================================================

def apply_change(live: Iterable[InternalDataFile], change: TableChange) -> frozenset[InternalDataFile]:
    """
    Apply one commit's file delta to a live set.

    Raises:
        XTableError(REMOVED_NOT_LIVE): a removal references a path not in live
        XTableError(DUPLICATE_ADD): an added path is already live
    """
    current = index_by_path(live)
    for path in sorted(change.files_removed):
        if path not in current:
            raise XTableError(f"removed path {path} is not live", kind=ErrorKind.REMOVED_NOT_LIVE)
    for f in sorted(change.files_added, key=lambda f: f.rel_path):
        if f.rel_path in current:
            raise XTableError(f"added path {f.rel_path} is already live", kind=ErrorKind.DUPLICATE_ADD)

    result = {path: f for path, f in current.items() if path not in change.files_removed}
    for f in change.files_added:
        if f.rel_path in result:
            raise XTableError(f"added path {f.rel_path} appears twice", kind=ErrorKind.DUPLICATE_ADD)
        result[f.rel_path] = f
    return frozenset(result.values())


def fold_changes(live: Iterable[InternalDataFile], changes: Iterable[TableChange]) -> frozenset[InternalDataFile]:
    result = frozenset(live)
    for change in changes:
        result = apply_change(result, change)
    return result


def diff_filesets(
    current_target_live: Iterable[InternalDataFile],
    desired_source_live: Iterable[InternalDataFile],
    *,
    source_commit: Optional[FormatCommitId] = None,
    timestamp_ms: int = 0,
    schema: Optional[InternalSchema] = None,
) -> TableChange:
    """Minimal change turning the target's live set into the source's."""
    current = index_by_path(current_target_live)
    desired = index_by_path(desired_source_live)
    added = frozenset(f for path, f in desired.items() if path not in current)
    removed = frozenset(path for path in current if path not in desired)
    return TableChange(
        source_commit=source_commit,
        timestamp_ms=timestamp_ms,
        files_added=added,
        files_removed=removed,
        schema=schema,
        operation=Operation.OVERWRITE,
    )


def validate_schema(schema: InternalSchema) -> list[str]:
    violations = []
    ids = Counter(f.field_id for f in schema.fields)
    names = Counter(f.name for f in schema.fields)
    for field_id, count in sorted(ids.items()):
        if count > 1:
            violations.append(f"schema: field_id {field_id} used {count} times")
        if field_id < 1:
            violations.append(f"schema: field_id {field_id} is not positive")
    for name, count in sorted(names.items()):
        if count > 1:
            violations.append(f"schema: field name {name!r} used {count} times")
        if not name:
            violations.append("schema: empty field name")
    return violations


def validate_schema_evolution(previous: InternalSchema, current: InternalSchema) -> list[str]:
    """Schema monotonicity: append-only fields, immutable ids and types."""
    violations = []
    if current.schema_id < previous.schema_id:
        violations.append(f"schema: schema_id went backwards ({previous.schema_id} -> {current.schema_id})")
    if current.schema_id == previous.schema_id and not current.same_fields(previous):
        violations.append(f"schema: schema_id {current.schema_id} reused for different fields")
    for old in previous.fields:
        new = current.field_by_id(old.field_id)
        if new is None:
            violations.append(f"schema: field {old.name!r} (id {old.field_id}) was dropped")
        elif new.name != old.name:
            violations.append(f"schema: field id {old.field_id} renamed {old.name!r} -> {new.name!r}")
        elif new.type != old.type:
            violations.append(f"schema: field {old.name!r} changed type {old.type.value} -> {new.type.value}")
    for new in current.fields:
        if previous.field_by_id(new.field_id) is None and new.field_id <= previous.max_field_id:
            violations.append(f"schema: field id {new.field_id} reused for {new.name!r}")
    return violations


def validate_data_file(f: InternalDataFile, schema: InternalSchema, partition_columns: list[str]) -> list[str]:
    violations = []
    path_violation = validate_rel_path(f.rel_path)
    if path_violation:
        violations.append(path_violation)
    if sorted(f.partitions) != sorted(partition_columns):
        violations.append(
            f"{f.rel_path}: partition keys {sorted(f.partitions)} do not match spec {sorted(partition_columns)}"
        )
    if f.record_count < 0:
        violations.append(f"{f.rel_path}: negative record_count")
    if f.file_size_bytes < 0:
        violations.append(f"{f.rel_path}: negative file_size_bytes")
    for stat in f.column_stats or ():
        schema_field = schema.field_by_id(stat.field_id)
        if schema_field is None:
            violations.append(f"{f.rel_path}: stats for unknown field id {stat.field_id}")
            continue
        if stat.null_count < 0:
            violations.append(f"{f.rel_path}: negative null_count for {schema_field.name}")
        try:
            low = parse_value(schema_field.type, stat.min)
            high = parse_value(schema_field.type, stat.max)
        except ValueError as exc:
            violations.append(f"{f.rel_path}: non-canonical stats for {schema_field.name}: {exc}")
            continue
        if low is not None and high is not None and not low <= high:
            violations.append(f"{f.rel_path}: min > max for {schema_field.name}")
    return violations


def validate_snapshot(s: InternalSnapshot) -> list[str]:
    """Every invariant violation of a snapshot; empty means valid."""
    violations = validate_schema(s.schema)
    for pf in s.partition_spec:
        if s.schema.field_by_id(pf.source_field_id) is None:
            violations.append(f"partition_spec: source_field_id {pf.source_field_id} not in schema")
        if pf.transform != IDENTITY:
            violations.append(f"partition_spec: unsupported transform {pf.transform}")

    by_path: dict[str, list[InternalDataFile]] = {}
    for f in s.live_files:
        by_path.setdefault(f.rel_path, []).append(f)
    partition_columns = s.partition_columns
    for path in sorted(by_path):
        copies = by_path[path]
        if len(copies) > 1:
            violations.append(f"{path}: {len(copies)} live files share this rel_path")
        violations.extend(validate_data_file(copies[0], s.schema, partition_columns))
    return violations


def compare_snapshots(a: InternalSnapshot, b: InternalSnapshot) -> list[str]:
    """
    Differences under conformance equality: schema fields, partition column
    names, and the (rel_path, record_count, partition values) set. Stats
    are compared only when both sides carry them.
    """
    differences = []
    if a.schema.fields != b.schema.fields:
        left = [(f.field_id, f.name, f.type.value, f.nullable) for f in a.schema.fields]
        right = [(f.field_id, f.name, f.type.value, f.nullable) for f in b.schema.fields]
        differences.append(f"schema mismatch: {left} != {right}")
    if a.partition_columns != b.partition_columns:
        differences.append(f"partition columns mismatch: {a.partition_columns} != {b.partition_columns}")

    left_files = a.files_by_path()
    right_files = b.files_by_path()
    for path in sorted(set(left_files) - set(right_files)):
        differences.append(f"missing on right: {path}")
    for path in sorted(set(right_files) - set(left_files)):
        differences.append(f"missing on left: {path}")
    for path in sorted(set(left_files) & set(right_files)):
        lf, rf = left_files[path], right_files[path]
        if lf.record_count != rf.record_count:
            differences.append(f"record_count mismatch for {path}: {lf.record_count} != {rf.record_count}")
        if lf.partition_values != rf.partition_values:
            differences.append(f"partition values mismatch for {path}: {lf.partitions} != {rf.partitions}")
        if lf.column_stats is not None and rf.column_stats is not None and lf.column_stats != rf.column_stats:
            differences.append(f"column stats mismatch for {path}")
    return differences


def empty_snapshot_like(snapshot: InternalSnapshot) -> InternalSnapshot:
    return replace(snapshot, live_files=frozenset())
