"""
Delta-style transaction log reader/writer

Layout: ``<base>/_delta_log/%020d.json``, one canonical JSON action per line.
Version 0 carries the table's metaData; every version carries exactly one
commitInfo. Checkpoints are not written or read: snapshots fold the log.
"""
from __future__ import annotations

import json
import logging
import re
from typing import Any, Optional

from config import DELTA_LOG_DIR
from errors import ErrorKind, XTableError
from format_base import CommitRecord, FormatClient
from internal_model import (
    NULL_TOKEN,
    ColumnStat,
    FieldType,
    InternalDataFile,
    InternalField,
    InternalSchema,
    InternalSnapshot,
    Operation,
    TableChange,
    TableFormat,
    apply_change,
    partition_spec_for,
    validate_rel_path,
    validate_schema_evolution,
)
from storage import Storage, StoragePath
from utils import canonical_json

logger = logging.getLogger(__name__)

_RE_VERSION_FILE = re.compile(r"^(\d{20})\.json$")

ACTION_KEYS = ("commitInfo", "metaData", "add", "remove")

DELTA_TYPES = {
    FieldType.BOOL: "boolean",
    FieldType.INT32: "integer",
    FieldType.INT64: "long",
    FieldType.FLOAT64: "double",
    FieldType.STRING: "string",
    FieldType.DATE: "date",
    FieldType.TIMESTAMP_MICROS: "timestamp",
}
_FIELD_TYPES = {name: field_type for field_type, name in DELTA_TYPES.items()}

OP_CREATE = "CREATE TABLE"
_NATIVE_OPERATIONS = {
    Operation.APPEND: "WRITE",
    Operation.DELETE: "DELETE",
    Operation.OVERWRITE: "REPLACE",
    Operation.SCHEMA_CHANGE: "WRITE",
}
_INTERNAL_OPERATIONS = {"WRITE": Operation.APPEND, "DELETE": Operation.DELETE, "REPLACE": Operation.OVERWRITE}


def version_file_name(version: int) -> str:
    return f"{version:020d}.json"


# =============================================================================
# Schema / stats encoding
# =============================================================================

def schema_string(schema: InternalSchema) -> str:
    """Embedded schema JSON; fieldId rides along so ids survive round trips."""
    return canonical_json({
        "type": "struct",
        "schemaId": schema.schema_id,
        "fields": [
            {"name": f.name, "type": DELTA_TYPES[f.type], "nullable": f.nullable, "fieldId": f.field_id}
            for f in schema.fields
        ],
    })


def parse_schema_string(text: str, where: str) -> InternalSchema:
    try:
        doc = json.loads(text)
        fields = []
        for position, raw in enumerate(doc["fields"], start=1):
            type_name = raw["type"]
            if type_name not in _FIELD_TYPES:
                raise ValueError(f"unsupported column type {type_name!r}")
            fields.append(InternalField(
                field_id=int(raw.get("fieldId", position)),
                name=str(raw["name"]),
                type=_FIELD_TYPES[type_name],
                nullable=bool(raw.get("nullable", True)),
            ))
        return InternalSchema(int(doc.get("schemaId", 0)), tuple(fields))
    except (ValueError, KeyError, TypeError) as exc:
        raise XTableError(f"{where}: bad schemaString: {exc}", kind=ErrorKind.MALFORMED_ACTION) from exc


def stats_string(f: InternalDataFile, schema: InternalSchema) -> str:
    stats: dict[str, Any] = {"numRecords": f.record_count}
    if f.column_stats is not None:
        mins, maxs, nulls = {}, {}, {}
        for stat in f.column_stats:
            column = schema.field_by_id(stat.field_id)
            if column is None:
                continue
            mins[column.name] = stat.min
            maxs[column.name] = stat.max
            nulls[column.name] = stat.null_count
        stats.update(minValues=mins, maxValues=maxs, nullCount=nulls)
    return canonical_json(stats)


def parse_stats(text: Optional[str], schema: InternalSchema, where: str) -> tuple[int, Optional[tuple[ColumnStat, ...]]]:
    if not text:
        return 0, None
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise XTableError(f"{where}: bad stats string: {exc}", kind=ErrorKind.MALFORMED_ACTION) from exc
    record_count = int(doc.get("numRecords", 0))
    if "minValues" not in doc or "maxValues" not in doc:
        return record_count, None
    column_stats = []
    nulls = doc.get("nullCount", {})
    for name, low in doc["minValues"].items():
        column = schema.field_by_name(name)
        high = doc["maxValues"].get(name)
        if column is None or high is None:
            continue
        column_stats.append(ColumnStat(column.field_id, str(low), str(high), int(nulls.get(name, 0))))
    return record_count, tuple(sorted(column_stats, key=lambda s: s.field_id))


def _partition_values_from_delta(raw: dict) -> dict[str, Optional[str]]:
    # None maps to the internal null token in InternalDataFile
    return {str(k): (None if v is None else str(v)) for k, v in (raw or {}).items()}


def _partition_values_to_delta(f: InternalDataFile) -> dict[str, Optional[str]]:
    return {k: (None if v == NULL_TOKEN else v) for k, v in f.partition_values}


# =============================================================================
# Client
# =============================================================================

class DeltaClient(FormatClient):
    format = TableFormat.DELTA
    metadata_dir = DELTA_LOG_DIR

    def _version_path(self, version: int) -> StoragePath:
        return self.metadata_path.join(version_file_name(version))

    def exists(self) -> bool:
        return self.storage.exists(self._version_path(0))

    def list_versions(self) -> list[int]:
        """Contiguous version numbers 0..N."""
        if not self.storage.is_dir(self.metadata_path):
            raise XTableError(f"no Delta log at {self.base}", kind=ErrorKind.NO_TABLE)
        versions = []
        for name in self.storage.list_dir(self.metadata_path):
            match = _RE_VERSION_FILE.match(name)
            if match:
                versions.append(int(match.group(1)))
        for expected, version in enumerate(versions):
            if version != expected:
                raise XTableError(
                    f"Delta log at {self.base} is missing version {expected}",
                    kind=ErrorKind.GAP_IN_LOG,
                )
        return versions

    def _latest_version(self) -> int:
        versions = self.list_versions()
        if not versions:
            raise XTableError(f"Delta log at {self.base} has no versions", kind=ErrorKind.NO_TABLE)
        return versions[-1]

    def read_actions(self, version: int) -> list[dict]:
        path = self._version_path(version)
        key = str(path)
        if key in self._cache:
            return self._cache[key]
        try:
            text = self.storage.read_file(path).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise XTableError(
                f"{version_file_name(version)} is not UTF-8: {exc}", kind=ErrorKind.MALFORMED_ACTION
            ) from exc
        actions = []
        for line_no, line in enumerate(text.split("\n"), start=1):
            if not line.strip():
                continue
            try:
                action = json.loads(line)
            except ValueError as exc:
                raise XTableError(
                    f"{version_file_name(version)} line {line_no}: {exc}", kind=ErrorKind.MALFORMED_ACTION
                ) from exc
            if not isinstance(action, dict) or len(action) != 1:
                raise XTableError(
                    f"{version_file_name(version)} line {line_no}: expected one action object",
                    kind=ErrorKind.MALFORMED_ACTION,
                )
            kind, body = next(iter(action.items()))
            if kind not in ACTION_KEYS:
                # protocol, txn and other actions are not modeled
                logger.debug(f"skipping {kind} action in {version_file_name(version)}")
                continue
            if not isinstance(body, dict) or (kind in ("add", "remove") and "path" not in body):
                raise XTableError(
                    f"{version_file_name(version)} line {line_no}: malformed {kind} action",
                    kind=ErrorKind.MALFORMED_ACTION,
                )
            actions.append(action)
        if version == 0 and not any("metaData" in a for a in actions):
            raise XTableError(f"{version_file_name(0)}: version 0 has no metaData", kind=ErrorKind.MALFORMED_ACTION)
        self._cache[key] = actions
        return actions

    @staticmethod
    def _first(actions: list[dict], kind: str) -> Optional[dict]:
        for action in actions:
            if kind in action:
                return action[kind]
        return None

    def _metadata_at(self, version: int) -> dict:
        """Most recent metaData at or before *version*."""
        for v in range(version, -1, -1):
            meta = self._first(self.read_actions(v), "metaData")
            if meta is not None:
                return meta
        raise XTableError(f"no metaData at or before version {version}", kind=ErrorKind.MALFORMED_ACTION)

    def _file_from_add(self, add: dict, schema: InternalSchema, version: int) -> InternalDataFile:
        where = f"{version_file_name(version)} add {add['path']}"
        record_count, column_stats = parse_stats(add.get("stats"), schema, where)
        return InternalDataFile(
            rel_path=add["path"],
            partition_values=_partition_values_from_delta(add.get("partitionValues")),
            record_count=record_count,
            file_size_bytes=int(add.get("size", 0)),
            column_stats=column_stats,
        )

    # ------------------------------------------------------------------
    # Reads
    # ------------------------------------------------------------------

    def read_snapshot(self, as_of: Optional[str] = None) -> InternalSnapshot:
        latest = self._latest_version()
        target = latest if as_of is None else int(as_of)
        if target > latest:
            raise XTableError(f"version {target} is ahead of latest {latest}", kind=ErrorKind.VERSION_AHEAD)
        if target < 0:
            raise ValueError(f"negative Delta version {target}")

        live: dict[str, dict] = {}
        meta: dict = {}
        added_in: dict[str, int] = {}
        for version in range(target + 1):
            for action in self.read_actions(version):
                if "metaData" in action:
                    meta = action["metaData"]
                elif "remove" in action:
                    live.pop(action["remove"]["path"], None)
                elif "add" in action:
                    live[action["add"]["path"]] = action["add"]
                    added_in[action["add"]["path"]] = version

        schema = parse_schema_string(meta.get("schemaString", ""), version_file_name(target))
        commit_info = self._first(self.read_actions(target), "commitInfo") or {}
        files = [self._file_from_add(add, schema, added_in[path]) for path, add in live.items()]
        return InternalSnapshot(
            source_commit=self.commit_id(str(target)),
            timestamp_ms=int(commit_info.get("timestamp", 0)),
            schema=schema,
            partition_spec=partition_spec_for(schema, meta.get("partitionColumns", [])),
            live_files=frozenset(files),
            table_name=meta.get("name") or self.base.name,
        )

    def read_changes_since(
        self, after: Optional[str], schema_hint: Optional[InternalSchema] = None
    ) -> list[TableChange]:
        latest = self._latest_version()
        after_version = -1 if after in (None, "") else int(after)
        if after_version > latest:
            raise XTableError(
                f"sync state names version {after_version}, latest is {latest}", kind=ErrorKind.VERSION_AHEAD
            )
        if after_version == latest:
            return []

        schema = schema_hint
        if schema is None and after_version >= 0:
            meta = self._metadata_at(after_version)
            schema = parse_schema_string(meta["schemaString"], version_file_name(after_version))

        changes = []
        for version in range(after_version + 1, latest + 1):
            actions = self.read_actions(version)
            meta = self._first(actions, "metaData")
            if meta is not None:
                schema = parse_schema_string(meta["schemaString"], version_file_name(version))
            if schema is None:
                raise XTableError(f"no schema for version {version}", kind=ErrorKind.MALFORMED_ACTION)
            commit_info = self._first(actions, "commitInfo") or {}
            added = frozenset(self._file_from_add(a["add"], schema, version) for a in actions if "add" in a)
            removed = frozenset(a["remove"]["path"] for a in actions if "remove" in a)
            changes.append(TableChange(
                source_commit=self.commit_id(str(version)),
                timestamp_ms=int(commit_info.get("timestamp", 0)),
                files_added=added,
                files_removed=removed,
                schema=schema,
                operation=self._operation_of(commit_info, meta is not None, added, removed),
            ))
        return changes

    @staticmethod
    def _operation_of(commit_info: dict, has_metadata: bool, added, removed) -> Operation:
        label = commit_info.get("xtableOperation")
        if label in Operation.__members__:
            return Operation[label]
        if has_metadata and not added and not removed:
            return Operation.SCHEMA_CHANGE
        return _INTERNAL_OPERATIONS.get(commit_info.get("operation", ""), Operation.APPEND)

    def read_source_tags(self) -> dict[str, str]:
        tags = {}
        for version in self.list_versions():
            commit_info = self._first(self.read_actions(version), "commitInfo") or {}
            tag = commit_info.get("xtableSourceCommit")
            if tag:
                tags[str(version)] = tag
        return tags

    def commit_history(self) -> list[CommitRecord]:
        history = []
        for version in self.list_versions():
            commit_info = self._first(self.read_actions(version), "commitInfo") or {}
            history.append(CommitRecord(
                token=str(version),
                timestamp_ms=int(commit_info.get("timestamp", 0)),
                operation=commit_info.get("operation", ""),
                source_tag=commit_info.get("xtableSourceCommit"),
            ))
        return history

    def latest_token(self) -> str:
        return str(self._latest_version())

    def earliest_token(self) -> str:
        return "0"

    def table_name(self) -> str:
        return self._metadata_at(self._latest_version()).get("name") or self.base.name

    # ------------------------------------------------------------------
    # Writes
    # ------------------------------------------------------------------

    def init(self, table: InternalSnapshot) -> None:
        if self.exists():
            raise XTableError(f"Delta table already exists at {self.base}", kind=ErrorKind.TABLE_EXISTS)
        if table.live_files:
            raise XTableError("init takes a snapshot with no live files", kind=ErrorKind.INVALID_CHANGE)
        actions = [
            {"commitInfo": {"timestamp": table.timestamp_ms, "operation": OP_CREATE}},
            {"metaData": self._metadata_action(self.new_uuid(), table.table_name, table.schema, table.partition_columns)},
        ]
        self._publish_version(0, actions)
        logger.info(f"✅ created Delta table {table.table_name} at {self.base}")

    @staticmethod
    def _metadata_action(table_id: str, name: str, schema: InternalSchema, partition_columns: list[str]) -> dict:
        return {
            "id": table_id,
            "name": name,
            "schemaString": schema_string(schema),
            "partitionColumns": list(partition_columns),
            "configuration": {},
        }

    def _publish_version(self, version: int, actions: list[dict]) -> None:
        body = "\n".join(canonical_json(a) for a in actions) + "\n"
        self._publish(self._version_path(version), body.encode("utf-8"))

    def write_change(self, change: TableChange, source_tag: Optional[str] = None) -> str:
        current = self.read_snapshot()
        latest = int(current.source_commit.token)
        try:
            apply_change(current.live_files, change)
        except XTableError as exc:
            raise XTableError(f"change does not apply to Delta table: {exc}", kind=ErrorKind.INVALID_CHANGE) from exc
        for f in change.files_added:
            violation = validate_rel_path(f.rel_path)
            if violation:
                raise XTableError(violation, kind=ErrorKind.INVALID_CHANGE)

        schema = current.schema
        commit_info: dict[str, Any] = {
            "timestamp": change.timestamp_ms,
            "operation": _NATIVE_OPERATIONS[change.operation],
            "xtableOperation": change.operation.value,
        }
        if source_tag:
            commit_info["xtableSourceCommit"] = source_tag
        actions: list[dict] = [{"commitInfo": commit_info}]

        if change.schema is not None and not change.schema.same_fields(current.schema):
            violations = validate_schema_evolution(current.schema, change.schema)
            if violations:
                raise XTableError("; ".join(violations), kind=ErrorKind.INVALID_CHANGE)
            schema = change.schema
            meta = self._metadata_at(latest)
            actions.append({"metaData": self._metadata_action(
                meta.get("id") or self.new_uuid(), meta.get("name", current.table_name), schema,
                meta.get("partitionColumns", []),
            )})

        for path in sorted(change.files_removed):
            actions.append({"remove": {
                "path": path,
                "deletionTimestamp": change.timestamp_ms,
                "dataChange": True,
            }})
        for f in sorted(change.files_added, key=lambda f: f.rel_path):
            actions.append({"add": {
                "path": f.rel_path,
                "partitionValues": _partition_values_to_delta(f),
                "size": f.file_size_bytes,
                "modificationTime": change.timestamp_ms,
                "dataChange": True,
                "stats": stats_string(f, schema),
            }})

        version = latest + 1
        self._publish_version(version, actions)
        logger.debug(f"Delta {self.base} v{version}: +{len(change.files_added)} -{len(change.files_removed)}")
        return str(version)


# =============================================================================
# Module-level operations
# =============================================================================

def delta_read_snapshot(storage: Storage, base: StoragePath, as_of_version: Optional[int] = None) -> InternalSnapshot:
    return DeltaClient(storage, base).read_snapshot(None if as_of_version is None else str(as_of_version))


def delta_read_changes_since(storage: Storage, base: StoragePath, after_version: int) -> list[TableChange]:
    return DeltaClient(storage, base).read_changes_since(str(after_version))


def delta_write_change(storage: Storage, base: StoragePath, change: TableChange, source_tag: Optional[str] = None) -> int:
    return int(DeltaClient(storage, base).write_change(change, source_tag))


def delta_init(storage: Storage, base: StoragePath, table: InternalSnapshot) -> None:
    DeltaClient(storage, base).init(table)


def delta_read_source_tags(storage: Storage, base: StoragePath) -> dict[int, str]:
    return {int(v): tag for v, tag in DeltaClient(storage, base).read_source_tags().items()}
