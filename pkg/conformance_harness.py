"""
Conformance harness: the "engines" side of the translator

Generates seeded workloads, writes them as native commits in any format
(CSV payloads with a header row, one file per partition slice), keeps a
row-level oracle of the logical table, and scans live rows back from any
format. This is the only module that reads data files.
"""
from __future__ import annotations

import csv
import io
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Any, Optional, Union

import pytz

from config import DATA_FILE_EXTENSION, METADATA_DIRS
from errors import ErrorKind, XTableError
from format_base import CommitRecord, FormatClient, get_format_client, hive_partition_path
from format_hudi import base_file_name, file_id_of
from internal_model import (
    NULL_TOKEN,
    ColumnStat,
    FieldType,
    FormatCommitId,
    InternalDataFile,
    InternalField,
    InternalSchema,
    InternalSnapshot,
    Operation,
    TableChange,
    TableFormat,
    compare_snapshots,
    partition_spec_for,
    render_value,
    value_sort_key,
)
from storage import LocalStorage, Storage, StoragePath, iter_files, parse_uri
from sync_core import DatasetConfig, PlanMode, SyncConfig, SyncReport, run_sync, sync_table
from utils import canonical_json

logger = logging.getLogger(__name__)

# 2024-01-01T12:00:00Z; op N commits at BASE + N seconds
BASE_TIMESTAMP_MS = 1704110400000
OP_INTERVAL_MS = 1000

_EXTRA_TYPES = (FieldType.INT64, FieldType.STRING, FieldType.BOOL, FieldType.FLOAT64)

Row = tuple[str, ...]


# =============================================================================
# Workload ops
# =============================================================================

@dataclass(frozen=True)
class CreateOp:
    op_id: int
    table_name: str
    schema: InternalSchema
    partition_columns: tuple[str, ...] = ()


@dataclass(frozen=True)
class InsertOp:
    op_id: int
    # typed values aligned to the schema current at this op
    rows: tuple[tuple[Any, ...], ...]
    fan_out: int = 1


@dataclass(frozen=True)
class DeleteOp:
    """DELETE WHERE column = value, value in canonical form."""

    op_id: int
    column: str
    value: str


@dataclass(frozen=True)
class AddColumnOp:
    op_id: int
    name: str
    field_type: FieldType


WorkloadOp = Union[CreateOp, InsertOp, DeleteOp, AddColumnOp]


@dataclass(frozen=True)
class WorkloadProfile:
    partitions: int = 3
    rows_per_insert: int = 6
    delete_ratio: float = 0.2
    schema_evolution_ratio: float = 0.0
    fan_out: int = 2


def base_schema() -> InternalSchema:
    return InternalSchema(0, (
        InternalField(1, "id", FieldType.INT64, nullable=False),
        InternalField(2, "category", FieldType.STRING),
        InternalField(3, "amount", FieldType.FLOAT64),
        InternalField(4, "event_date", FieldType.DATE),
        InternalField(5, "active", FieldType.BOOL),
        InternalField(6, "updated_at", FieldType.TIMESTAMP_MICROS),
    ))


def _random_value(rng: random.Random, field_type: FieldType) -> Any:
    if field_type is FieldType.BOOL:
        return rng.random() < 0.5
    if field_type in (FieldType.INT32, FieldType.INT64):
        return rng.randrange(-10_000, 10_000)
    if field_type is FieldType.FLOAT64:
        return round(rng.uniform(-1000.0, 1000.0), 2)
    if field_type is FieldType.STRING:
        return f"s{rng.randrange(1000)}"
    if field_type is FieldType.DATE:
        return date(2024, 1, 1) + timedelta(days=rng.randrange(366))
    return datetime(2024, 1, 1, tzinfo=pytz.UTC) + timedelta(
        seconds=rng.randrange(86400 * 30), microseconds=rng.randrange(1_000_000)
    )


def _random_row(rng: random.Random, schema: InternalSchema, row_id: int, categories: list[str]) -> tuple:
    values: list[Any] = []
    for f in schema.fields:
        if f.name == "id":
            values.append(row_id)
        elif f.name == "category":
            values.append(None if rng.random() < 0.1 else rng.choice(categories))
        elif f.nullable and rng.random() < 0.05:
            values.append(None)
        else:
            values.append(_random_value(rng, f.type))
    return tuple(values)


def generate_workload(
    seed: int,
    n_ops: int,
    profile: Optional[WorkloadProfile] = None,
    *,
    table_name: str = "events",
) -> list[WorkloadOp]:
    """
    Deterministic op list for (seed, n_ops, profile): CREATE first, then
    inserts, deletes and column additions. The op after CREATE is always an
    insert, and at least one delete is present when delete_ratio > 0 and
    n_ops >= 5.
    """
    if n_ops < 1:
        raise ValueError("n_ops must be at least 1")
    profile = profile or WorkloadProfile()
    rng = random.Random(seed)
    schema = base_schema()
    categories = [f"c{i}" for i in range(max(1, profile.partitions))]
    ops: list[WorkloadOp] = [CreateOp(0, table_name, schema, ("category",))]
    live: dict[int, Optional[str]] = {}
    next_id = 1

    for op_id in range(1, n_ops):
        roll = rng.random()
        if op_id > 1 and roll < profile.delete_ratio and live:
            if rng.random() < 0.5 and any(c is not None for c in live.values()):
                value = rng.choice(sorted(c for c in live.values() if c is not None))
                op = DeleteOp(op_id, "category", value)
                live = {k: c for k, c in live.items() if c != value}
            else:
                victim = rng.choice(sorted(live))
                op = DeleteOp(op_id, "id", str(victim))
                del live[victim]
            ops.append(op)
        elif op_id > 1 and roll < profile.delete_ratio + profile.schema_evolution_ratio:
            name, field_type = f"extra_{op_id}", rng.choice(_EXTRA_TYPES)
            schema = schema.add_field(name, field_type)
            ops.append(AddColumnOp(op_id, name, field_type))
        else:
            rows = tuple(_random_row(rng, schema, next_id + i, categories) for i in range(profile.rows_per_insert))
            next_id += profile.rows_per_insert
            live.update({row[0]: row[1] for row in rows})
            ops.append(InsertOp(op_id, rows, profile.fan_out))

    if profile.delete_ratio > 0 and n_ops >= 5 and not any(isinstance(op, DeleteOp) for op in ops):
        # id 1 came from the first insert and nothing was deleted yet
        ops[-1] = DeleteOp(n_ops - 1, "id", "1")
    return ops


def sales_workload() -> list[WorkloadOp]:
    """CREATE sales; INSERT (1,'a'),(2,'b'),(3,'b'); DELETE WHERE s_id = 3."""
    schema = InternalSchema(0, (
        InternalField(1, "s_id", FieldType.INT32, nullable=False),
        InternalField(2, "s_type", FieldType.STRING),
    ))
    return [
        CreateOp(0, "sales", schema, ("s_type",)),
        InsertOp(1, ((1, "a"), (2, "b"), (3, "b")), fan_out=1),
        DeleteOp(2, "s_id", "3"),
    ]


# =============================================================================
# Oracle
# =============================================================================

@dataclass
class LogicalTable:
    """Row multiset of the table after every committed op."""

    schema: Optional[InternalSchema] = None
    rows: Counter = field(default_factory=Counter)
    history: list[tuple[int, InternalSchema, Counter]] = field(default_factory=list)

    def commit(self, op_id: int) -> None:
        self.history.append((op_id, self.schema, Counter(self.rows)))

    def insert(self, rows: list[Row]) -> None:
        self.rows.update(rows)

    def delete(self, column: str, value: str) -> None:
        index = self.schema.names.index(column)
        self.rows = Counter({row: n for row, n in self.rows.items() if row[index] != value})

    def add_column(self, name: str, field_type: FieldType) -> None:
        self.schema = self.schema.add_field(name, field_type)
        self.rows = Counter({row + (NULL_TOKEN,): n for row, n in self.rows.items()})


# =============================================================================
# Payloads
# =============================================================================

def render_payload(header: tuple[str, ...], rows: list[Row]) -> bytes:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue().encode("utf-8")


def parse_payload(payload: bytes) -> tuple[tuple[str, ...], list[Row]]:
    reader = csv.reader(io.StringIO(payload.decode("utf-8")))
    lines = [tuple(line) for line in reader if line]
    if not lines:
        return (), []
    return lines[0], lines[1:]


def align_rows(header: tuple[str, ...], rows: list[Row], schema: InternalSchema) -> list[Row]:
    """Rows re-ordered to the schema; columns absent from the file are null."""
    positions = {name: i for i, name in enumerate(header)}
    return [
        tuple(row[positions[name]] if name in positions else NULL_TOKEN for name in schema.names)
        for row in rows
    ]


def compute_column_stats(
    schema: InternalSchema, header: tuple[str, ...], rows: list[Row]
) -> Optional[tuple[ColumnStat, ...]]:
    """Brute-force min/max/null count per column present in the file."""
    stats = []
    for f in schema.fields:
        if f.name not in header:
            continue
        index = header.index(f.name)
        values = [row[index] for row in rows if row[index] != NULL_TOKEN]
        if not values:
            continue
        ordered = sorted(values, key=lambda v: value_sort_key(f.type, v))
        stats.append(ColumnStat(f.field_id, ordered[0], ordered[-1], len(rows) - len(values)))
    return tuple(stats) or None


# =============================================================================
# Native writer
# =============================================================================

@dataclass
class WrittenFile:
    data_file: InternalDataFile
    header: tuple[str, ...]
    rows: list[Row]


class WorkloadWriter:
    """Writes workload ops as native commits of one format and tracks the oracle."""

    def __init__(
        self,
        table_format: TableFormat,
        storage: Storage,
        base: StoragePath,
        *,
        rng: Optional[random.Random] = None,
        with_stats: bool = True,
    ):
        self.table_format = table_format
        self.storage = storage
        self.base = base
        self.client = get_format_client(table_format, storage, base, rng)
        self.with_stats = with_stats
        self.table = LogicalTable()
        self.live: dict[str, WrittenFile] = {}
        # true stats of every file written, kept even when the format drops them
        self.stats_by_path: dict[str, Optional[tuple[ColumnStat, ...]]] = {}
        self.commits: list[FormatCommitId] = []
        self.partition_columns: list[str] = []
        self._file_seq = 0
        self._instant: Optional[str] = None

    # ------------------------------------------------------------------

    def apply_all(self, ops: list[WorkloadOp]) -> list[FormatCommitId]:
        for op in ops:
            self.apply(op)
        return self.commits

    def apply(self, op: WorkloadOp) -> FormatCommitId:
        timestamp_ms = BASE_TIMESTAMP_MS + op.op_id * OP_INTERVAL_MS
        if isinstance(op, CreateOp):
            token = self._create(op, timestamp_ms)
        elif self.table.schema is None:
            raise ValueError(f"op {op.op_id} precedes CREATE")
        elif isinstance(op, InsertOp):
            token = self._insert(op, timestamp_ms)
        elif isinstance(op, DeleteOp):
            token = self._delete(op, timestamp_ms)
        elif isinstance(op, AddColumnOp):
            token = self._add_column(op, timestamp_ms)
        else:
            raise TypeError(f"unknown workload op {op!r}")
        commit = self.client.commit_id(token)
        self.commits.append(commit)
        self.table.commit(op.op_id)
        return commit

    def _create(self, op: CreateOp, timestamp_ms: int) -> str:
        if self.table.schema is not None:
            raise ValueError("CREATE must be the first and only CREATE op")
        self.client.init(InternalSnapshot(
            source_commit=None,
            timestamp_ms=timestamp_ms,
            schema=op.schema,
            partition_spec=partition_spec_for(op.schema, op.partition_columns),
            table_name=op.table_name,
        ))
        self.table.schema = op.schema
        self.partition_columns = list(op.partition_columns)
        return self.client.latest_token()

    def _commit(self, timestamp_ms: int, added, removed, operation: Operation) -> str:
        change = TableChange(
            source_commit=None,
            timestamp_ms=timestamp_ms,
            files_added=frozenset(w.data_file for w in added),
            files_removed=frozenset(removed),
            schema=self.table.schema,
            operation=operation,
        )
        token = self.client.write_change(change)
        for path in removed:
            self.live.pop(path)
        for written in added:
            self.live[written.data_file.rel_path] = written
        return token

    def _write_file(self, op_id: int, partition_values: dict[str, str], rows: list[Row],
                    file_id: Optional[str] = None) -> WrittenFile:
        schema = self.table.schema
        header = tuple(schema.names)
        partition_path = hive_partition_path(self.partition_columns, partition_values)
        if self.table_format is TableFormat.HUDI:
            name = base_file_name(file_id or self.client.new_uuid(), self._instant)
        else:
            name = f"part-{op_id:05d}-{self._file_seq:03d}-{self.client.new_uuid()}{DATA_FILE_EXTENSION}"
        self._file_seq += 1
        rel_path = f"{partition_path}/{name}" if partition_path else name

        payload = render_payload(header, rows)
        self.storage.put_if_absent(self.base.join(rel_path), payload)
        stats = compute_column_stats(schema, header, rows)
        self.stats_by_path[rel_path] = stats
        data_file = InternalDataFile(
            rel_path=rel_path,
            partition_values=partition_values,
            record_count=len(rows),
            file_size_bytes=len(payload),
            column_stats=stats if self.with_stats else None,
        )
        return WrittenFile(data_file, header, list(rows))

    def _partition_of(self, row: Row) -> dict[str, str]:
        names = self.table.schema.names
        return {column: row[names.index(column)] for column in self.partition_columns}

    def _insert(self, op: InsertOp, timestamp_ms: int) -> str:
        schema = self.table.schema
        rows = [tuple(render_value(f.type, v) for f, v in zip(schema.fields, values)) for values in op.rows]
        self._instant = self.client.next_instant(timestamp_ms) if self.table_format is TableFormat.HUDI else None

        slices: dict[tuple, list[Row]] = {}
        for row in rows:
            key = tuple(sorted(self._partition_of(row).items()))
            slices.setdefault(key, []).append(row)
        added = []
        fan_out = max(1, op.fan_out)
        for key in sorted(slices):
            slice_rows = slices[key]
            for k in range(fan_out):
                chunk = slice_rows[k::fan_out]
                if chunk:
                    added.append(self._write_file(op.op_id, dict(key), chunk))
        token = self._commit(timestamp_ms, added, [], Operation.APPEND)
        self.table.insert(rows)
        return token

    def _delete(self, op: DeleteOp, timestamp_ms: int) -> str:
        schema = self.table.schema
        if schema.field_by_name(op.column) is None:
            raise ValueError(f"DELETE predicate column {op.column!r} not in schema")
        self._instant = self.client.next_instant(timestamp_ms) if self.table_format is TableFormat.HUDI else None

        removed, added = [], []
        for path in sorted(self.live):
            written = self.live[path]
            rows = align_rows(written.header, written.rows, schema)
            index = schema.names.index(op.column)
            keep = [row for row in rows if row[index] != op.value]
            if len(keep) == len(rows):
                continue
            removed.append(path)
            if keep:
                file_id = file_id_of(path) if self.table_format is TableFormat.HUDI else None
                added.append(self._write_file(op.op_id, written.data_file.partitions, keep, file_id))
        token = self._commit(timestamp_ms, added, removed, Operation.DELETE)
        self.table.delete(op.column, op.value)
        return token

    def _add_column(self, op: AddColumnOp, timestamp_ms: int) -> str:
        self.table.add_column(op.name, op.field_type)
        return self._commit(timestamp_ms, [], [], Operation.SCHEMA_CHANGE)


def apply_workload(
    table_format: TableFormat,
    storage: Storage,
    base: StoragePath,
    ops: list[WorkloadOp],
    *,
    seed: Optional[int] = None,
    with_stats: bool = True,
) -> list[FormatCommitId]:
    """Write *ops* as native commits; returns one commit id per op (creation first)."""
    rng = random.Random(seed) if seed is not None else None
    return WorkloadWriter(table_format, storage, base, rng=rng, with_stats=with_stats).apply_all(ops)


# =============================================================================
# Scans
# =============================================================================

def scan_live(
    table_format: TableFormat,
    storage: Storage,
    base: StoragePath,
    as_of: Optional[str] = None,
) -> tuple[InternalSchema, Counter]:
    """
    Resolve live files from metadata, then read their rows.

    Raises:
        XTableError(MISSING_DATA_FILE): metadata references an absent file
    """
    snapshot = get_format_client(table_format, storage, base).read_snapshot(as_of)
    rows: Counter = Counter()
    for f in sorted(snapshot.live_files, key=lambda f: f.rel_path):
        try:
            payload = storage.read_file(base.join(f.rel_path))
        except XTableError as exc:
            if exc.kind is not ErrorKind.NOT_FOUND:
                raise
            raise XTableError(
                f"{table_format.value} metadata references missing data file {f.rel_path}",
                kind=ErrorKind.MISSING_DATA_FILE,
            ) from exc
        header, file_rows = parse_payload(payload)
        rows.update(align_rows(header, file_rows, snapshot.schema))
    return snapshot.schema, rows


def brute_force_stats(storage: Storage, base: StoragePath, snapshot: InternalSnapshot) -> dict[str, Optional[tuple]]:
    """True per-file column stats recomputed from the payloads."""
    result = {}
    for f in snapshot.live_files:
        header, rows = parse_payload(storage.read_file(base.join(f.rel_path)))
        result[f.rel_path] = compute_column_stats(snapshot.schema, header, rows)
    return result


def clone_table(storage: Storage, source: StoragePath, destination: StoragePath, table_format: TableFormat) -> None:
    """Copy data files and one format's metadata into a fresh base."""
    keep_dir = get_format_client(table_format, storage, source).metadata_dir
    for path in iter_files(storage, source):
        rel_path = path.relative_to(source)
        top = rel_path.split("/", 1)[0]
        if top in METADATA_DIRS and top != keep_dir:
            continue
        storage.put_if_absent(destination.join(rel_path), storage.read_file(path))


# =============================================================================
# Stats injection
# =============================================================================

class StatsEnrichingSource(FormatClient):
    """Source client that attaches harness-computed ColumnStats to every file it reports."""

    def __init__(self, inner: FormatClient, stats_by_path: dict[str, Optional[tuple[ColumnStat, ...]]]):
        super().__init__(inner.storage, inner.base, inner.rng)
        self.inner = inner
        self.format = inner.format
        self.metadata_dir = inner.metadata_dir
        self.stats_by_path = stats_by_path

    def _enrich(self, f: InternalDataFile) -> InternalDataFile:
        stats = self.stats_by_path.get(f.rel_path)
        if stats is None:
            return f
        return InternalDataFile(f.rel_path, f.partition_values, f.record_count, f.file_size_bytes, stats)

    def read_snapshot(self, as_of: Optional[str] = None) -> InternalSnapshot:
        snapshot = self.inner.read_snapshot(as_of)
        return snapshot.with_live_files(self._enrich(f) for f in snapshot.live_files)

    def read_changes_since(self, after: Optional[str], schema_hint: Optional[InternalSchema] = None) -> list[TableChange]:
        return [
            TableChange(
                source_commit=c.source_commit,
                timestamp_ms=c.timestamp_ms,
                files_added=frozenset(self._enrich(f) for f in c.files_added),
                files_removed=c.files_removed,
                schema=c.schema,
                operation=c.operation,
            )
            for c in self.inner.read_changes_since(after, schema_hint)
        ]

    def exists(self) -> bool:
        return self.inner.exists()

    def init(self, table: InternalSnapshot) -> None:
        self.inner.init(table)

    def write_change(self, change: TableChange, source_tag: Optional[str] = None) -> str:
        return self.inner.write_change(change, source_tag)

    def read_source_tags(self) -> dict[str, str]:
        return self.inner.read_source_tags()

    def commit_history(self) -> list[CommitRecord]:
        return self.inner.commit_history()

    def latest_token(self) -> str:
        return self.inner.latest_token()

    def earliest_token(self) -> str:
        return self.inner.earliest_token()

    def table_name(self) -> str:
        return self.inner.table_name()


# =============================================================================
# Scenarios
# =============================================================================

@dataclass
class ScenarioReport:
    failures: list[str] = field(default_factory=list)
    checks: int = 0

    def check(self, condition: bool, message: str) -> bool:
        self.checks += 1
        if not condition:
            self.failures.append(message)
            logger.error(f"❌ {message}")
        return condition

    def check_reports(self, reports: list[SyncReport], label: str) -> None:
        for report in reports:
            self.check(report.ok, f"{label}: {report.summary()}")

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_json(self) -> str:
        return canonical_json({"checks": self.checks, "failures": self.failures})


def _same_table(report: ScenarioReport, storage: Storage, base: StoragePath,
                left: TableFormat, right: TableFormat, label: str,
                right_base: Optional[StoragePath] = None) -> None:
    right_base = right_base or base
    left_snapshot = get_format_client(left, storage, base).read_snapshot()
    right_snapshot = get_format_client(right, storage, right_base).read_snapshot()
    differences = compare_snapshots(left_snapshot, right_snapshot)
    report.check(not differences, f"{label}: {left.value} vs {right.value} differ: {differences[:3]}")
    left_rows = scan_live(left, storage, base)[1]
    right_rows = scan_live(right, storage, right_base)[1]
    report.check(left_rows == right_rows, f"{label}: {left.value} and {right.value} scans disagree")


def _scenario_import_export(report: ScenarioReport, storage: Storage, root: StoragePath, seed: int) -> None:
    partner = root.join("s1", "partner")
    apply_workload(TableFormat.DELTA, storage, partner, generate_workload(seed, 8, table_name="partner"), seed=seed)
    reports = run_sync(SyncConfig(TableFormat.DELTA, (TableFormat.HUDI, TableFormat.ICEBERG),
                                  (DatasetConfig(partner),)), storage=storage)
    report.check_reports(reports, "import/export import")
    for target in (TableFormat.HUDI, TableFormat.ICEBERG):
        _same_table(report, storage, partner, TableFormat.DELTA, target, "import/export import")

    reexport = root.join("s1", "reexport")
    clone_table(storage, partner, reexport, TableFormat.ICEBERG)
    reports = run_sync(SyncConfig(TableFormat.ICEBERG, (TableFormat.DELTA,), (DatasetConfig(reexport),)),
                       storage=storage)
    report.check_reports(reports, "import/export re-export")
    _same_table(report, storage, partner, TableFormat.DELTA, TableFormat.DELTA, "import/export re-export",
                right_base=reexport)

    empty = root.join("s1", "empty-partner")
    apply_workload(TableFormat.DELTA, storage, empty, generate_workload(seed, 1, table_name="partner"), seed=seed)
    reports = run_sync(SyncConfig(TableFormat.DELTA, (TableFormat.HUDI, TableFormat.ICEBERG),
                                  (DatasetConfig(empty),)), storage=storage)
    report.check_reports(reports, "import/export empty partner")
    for target in (TableFormat.HUDI, TableFormat.ICEBERG):
        _same_table(report, storage, empty, TableFormat.DELTA, target, "import/export empty partner")


def _scenario_cross_engine(report: ScenarioReport, storage: Storage, root: StoragePath, seed: int) -> None:
    stocks = root.join("s2", "stocks")
    crypto = root.join("s2", "crypto")
    apply_workload(TableFormat.HUDI, storage, stocks, generate_workload(seed, 10, table_name="Stocks"), seed=seed)
    apply_workload(TableFormat.ICEBERG, storage, crypto,
                   generate_workload(seed + 1, 10, table_name="Crypto"), seed=seed + 1)
    report.check_reports(run_sync(SyncConfig(TableFormat.HUDI, (TableFormat.ICEBERG,), (DatasetConfig(stocks),)),
                                  storage=storage), "cross-engine Stocks")
    report.check_reports(run_sync(SyncConfig(TableFormat.ICEBERG, (TableFormat.HUDI,), (DatasetConfig(crypto),)),
                                  storage=storage), "cross-engine Crypto")
    for base, name in ((stocks, "Stocks"), (crypto, "Crypto")):
        for table_format in (TableFormat.HUDI, TableFormat.ICEBERG):
            actual = get_format_client(table_format, storage, base).table_name()
            report.check(actual == name, f"cross-engine: {table_format.value} table name {actual!r}, expected {name!r}")
        _same_table(report, storage, base, TableFormat.HUDI, TableFormat.ICEBERG, f"cross-engine {name}")


def _scenario_stats(report: ScenarioReport, storage: Storage, root: StoragePath, seed: int) -> None:
    base = root.join("s3", "trips")
    writer = WorkloadWriter(TableFormat.HUDI, storage, base, rng=random.Random(seed))
    writer.apply_all(generate_workload(seed, 8, table_name="trips"))
    source = StatsEnrichingSource(writer.client, writer.stats_by_path)
    target = get_format_client(TableFormat.ICEBERG, storage, base)
    result = sync_table(storage, source, target, mode_override=PlanMode.INCREMENTAL)
    report.check_reports([result], "stats")

    hudi_snapshot = get_format_client(TableFormat.HUDI, storage, base).read_snapshot()
    report.check(all(f.column_stats is None for f in hudi_snapshot.live_files),
                 "stats: Hudi metadata carries column stats")
    iceberg = get_format_client(TableFormat.ICEBERG, storage, base)
    snapshot = iceberg.read_snapshot()
    truth = brute_force_stats(storage, base, snapshot)
    for f in sorted(snapshot.live_files, key=lambda f: f.rel_path):
        report.check(f.column_stats is not None, f"stats: {f.rel_path} has no Iceberg bounds")
        report.check(f.column_stats == truth[f.rel_path], f"stats: {f.rel_path} bounds differ from brute force")


def assert_scenarios(workdir: Union[str, Path], seed: int = 7, storage: Optional[Storage] = None) -> ScenarioReport:
    """Run the import/export, cross-engine and stats scenarios under *workdir*."""
    storage = storage or LocalStorage()
    root = parse_uri(str(Path(workdir).resolve()))
    report = ScenarioReport()
    for scenario in (_scenario_import_export, _scenario_cross_engine, _scenario_stats):
        try:
            scenario(report, storage, root, seed)
        except XTableError as exc:
            report.check(False, f"{scenario.__name__}: {exc}")
    logger.info(f"📊 scenarios: {report.checks} checks, {len(report.failures)} failures")
    return report
