"""
Iceberg-style snapshot/manifest reader/writer

Layout under ``<base>/metadata/``:
    version-hint.text                      root pointer (decimal N)
    v<N>.metadata.json                     table metadata
    snap-<snapshot_id>-manifest-list.json  one per snapshot
    manifest-<snapshot_id>.json            one per snapshot, full live set

Commit tokens are 1-based positions in the snapshot log ("0" is the
freshly created table). Snapshot ids stay internal.
"""
from __future__ import annotations

import copy
import logging
from typing import Any, Optional

from config import ICEBERG_METADATA_DIR
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

logger = logging.getLogger(__name__)

VERSION_HINT = "version-hint.text"

STATUS_EXISTING = 0
STATUS_ADDED = 1
STATUS_DELETED = 2

PARTITION_FIELD_ID_START = 1000
MAX_SNAPSHOT_ID = 2 ** 63 - 1

PROP_TABLE_NAME = "xtable.table-name"
PROP_CREATED_MS = "xtable.created-at-ms"
SUMMARY_SOURCE_COMMIT = "xtable.source.commit"
SUMMARY_OPERATION = "xtable.operation"

ICEBERG_TYPES = {
    FieldType.BOOL: "boolean",
    FieldType.INT32: "int",
    FieldType.INT64: "long",
    FieldType.FLOAT64: "double",
    FieldType.STRING: "string",
    FieldType.DATE: "date",
    FieldType.TIMESTAMP_MICROS: "timestamptz",
}
_FIELD_TYPES = {name: field_type for field_type, name in ICEBERG_TYPES.items()}
_FIELD_TYPES["timestamp"] = FieldType.TIMESTAMP_MICROS

_NATIVE_OPERATIONS = {
    Operation.APPEND: "append",
    Operation.DELETE: "delete",
    Operation.OVERWRITE: "overwrite",
    Operation.SCHEMA_CHANGE: "append",
}
_INTERNAL_OPERATIONS = {"append": Operation.APPEND, "delete": Operation.DELETE, "overwrite": Operation.OVERWRITE}


def _malformed(message: str, exc: Optional[Exception] = None) -> XTableError:
    err = XTableError(message, kind=ErrorKind.MALFORMED_METADATA)
    if exc is not None:
        err.__cause__ = exc
    return err


def schema_to_iceberg(schema: InternalSchema) -> dict:
    return {
        "type": "struct",
        "schema-id": schema.schema_id,
        "fields": [
            {"id": f.field_id, "name": f.name, "type": ICEBERG_TYPES[f.type], "required": not f.nullable}
            for f in schema.fields
        ],
    }


def schema_from_iceberg(doc: dict) -> InternalSchema:
    try:
        fields = tuple(
            InternalField(int(f["id"]), str(f["name"]), _FIELD_TYPES[f["type"]], not bool(f.get("required", False)))
            for f in doc["fields"]
        )
        return InternalSchema(int(doc.get("schema-id", 0)), fields)
    except (KeyError, TypeError, ValueError) as exc:
        raise _malformed(f"unreadable schema: {exc}", exc)


class IcebergClient(FormatClient):
    format = TableFormat.ICEBERG
    metadata_dir = ICEBERG_METADATA_DIR

    @property
    def _hint_path(self) -> StoragePath:
        return self.metadata_path.join(VERSION_HINT)

    def _metadata_file(self, version: int) -> StoragePath:
        return self.metadata_path.join(f"v{version}.metadata.json")

    def exists(self) -> bool:
        return self.storage.exists(self._hint_path)

    # ------------------------------------------------------------------
    # Root pointer
    # ------------------------------------------------------------------

    def current_version(self) -> int:
        """
        Version named by the hint, advanced past any newer published
        metadata file (a writer may crash between the two publications).
        """
        if not self.exists():
            raise XTableError(f"no Iceberg table at {self.base}", kind=ErrorKind.NO_TABLE)
        try:
            raw = self.storage.read_file(self._hint_path).decode("utf-8").strip()
        except UnicodeDecodeError as exc:
            raise _malformed(f"version hint is not UTF-8: {exc}") from exc
        if not raw.isdigit():
            raise _malformed(f"version hint {raw!r} is not a version number")
        version = int(raw)
        if not self.storage.exists(self._metadata_file(version)):
            raise XTableError(
                f"version hint names missing v{version}.metadata.json", kind=ErrorKind.DANGLING_POINTER
            )
        while self.storage.exists(self._metadata_file(version + 1)):
            version += 1
            logger.warning(f"⚠️ version hint at {self.base} is behind; using v{version}.metadata.json")
        return version

    def read_metadata(self) -> tuple[int, dict]:
        version = self.current_version()
        doc = self._read_json(self._metadata_file(version), kind=ErrorKind.MALFORMED_METADATA)
        if not isinstance(doc, dict) or "schemas" not in doc:
            raise _malformed(f"v{version}.metadata.json is not table metadata")
        return version, doc

    # ------------------------------------------------------------------
    # Document helpers
    # ------------------------------------------------------------------

    @staticmethod
    def _schemas(doc: dict) -> dict[int, InternalSchema]:
        schemas = {}
        for raw in doc.get("schemas", []):
            schema = schema_from_iceberg(raw)
            schemas[schema.schema_id] = schema
        if not schemas:
            raise _malformed("table metadata has no schemas")
        return schemas

    def _schema(self, doc: dict, schema_id: Optional[int]) -> InternalSchema:
        schemas = self._schemas(doc)
        if schema_id is None:
            schema_id = doc.get("current-schema-id", min(schemas))
        if schema_id not in schemas:
            raise _malformed(f"unknown schema id {schema_id}")
        return schemas[schema_id]

    @staticmethod
    def _partition_names(doc: dict) -> list[str]:
        default_spec = doc.get("default-spec-id", 0)
        for spec in doc.get("partition-specs", []):
            if spec.get("spec-id", 0) == default_spec:
                return [f["name"] for f in spec.get("fields", [])]
        return []

    @staticmethod
    def _snapshot_log(doc: dict) -> list[dict]:
        return list(doc.get("snapshot-log", []))

    def _snapshot_at(self, doc: dict, ordinal: int) -> dict:
        log = self._snapshot_log(doc)
        snapshot_id = log[ordinal - 1]["snapshot-id"]
        for snapshot in doc.get("snapshots", []):
            if snapshot.get("snapshot-id") == snapshot_id:
                return snapshot
        raise XTableError(
            f"snapshot {snapshot_id} (ordinal {ordinal}) is no longer retained", kind=ErrorKind.SNAPSHOT_EXPIRED
        )

    def _ordinal(self, doc: dict, token: Optional[str]) -> int:
        length = len(self._snapshot_log(doc))
        if token in (None, ""):
            return length
        ordinal = int(token)
        if ordinal > length:
            raise XTableError(f"ordinal {ordinal} is ahead of latest {length}", kind=ErrorKind.VERSION_AHEAD)
        if ordinal < 0:
            raise ValueError(f"negative Iceberg ordinal {ordinal}")
        return ordinal

    def _manifest_entries(self, snapshot: dict) -> list[dict]:
        manifest_list = self._read_json(
            self.base.join(snapshot["manifest-list"]), kind=ErrorKind.MALFORMED_METADATA
        )
        entries = []
        for manifest in manifest_list.get("manifests", []):
            doc = self._read_json(self.base.join(manifest["manifest-path"]), kind=ErrorKind.MALFORMED_METADATA)
            entries.extend(doc.get("entries", []))
        return entries

    @staticmethod
    def _data_file(entry: dict) -> InternalDataFile:
        raw = entry["data-file"]
        column_stats = None
        if "lower-bounds" in raw and "upper-bounds" in raw:
            nulls = raw.get("null-value-counts", {})
            column_stats = tuple(sorted(
                (
                    ColumnStat(int(fid), str(low), str(raw["upper-bounds"][fid]), int(nulls.get(fid, 0)))
                    for fid, low in raw["lower-bounds"].items()
                    if fid in raw["upper-bounds"]
                ),
                key=lambda s: s.field_id,
            ))
        return InternalDataFile(
            rel_path=raw["file-path"],
            partition_values={k: v for k, v in raw.get("partition", {}).items()},
            record_count=int(raw.get("record-count", 0)),
            file_size_bytes=int(raw.get("file-size-in-bytes", 0)),
            column_stats=column_stats,
        )

    @staticmethod
    def _data_file_doc(f: InternalDataFile) -> dict:
        raw: dict[str, Any] = {
            "file-path": f.rel_path,
            "file-format": "DATA",
            "partition": {k: (None if v == NULL_TOKEN else v) for k, v in f.partition_values},
            "record-count": f.record_count,
            "file-size-in-bytes": f.file_size_bytes,
        }
        if f.column_stats is not None:
            raw["lower-bounds"] = {str(s.field_id): s.min for s in f.column_stats}
            raw["upper-bounds"] = {str(s.field_id): s.max for s in f.column_stats}
            raw["null-value-counts"] = {str(s.field_id): s.null_count for s in f.column_stats}
        return raw

    @staticmethod
    def _is_live(entry: dict) -> bool:
        return entry.get("status") in (STATUS_ADDED, STATUS_EXISTING)

    @staticmethod
    def _operation_of(summary: dict) -> Operation:
        label = summary.get(SUMMARY_OPERATION)
        if label in Operation.__members__:
            return Operation[label]
        return _INTERNAL_OPERATIONS.get(summary.get("operation", ""), Operation.APPEND)

    # ------------------------------------------------------------------
    # Reads
    # ------------------------------------------------------------------

    def read_snapshot(self, as_of: Optional[str] = None) -> InternalSnapshot:
        _, doc = self.read_metadata()
        ordinal = self._ordinal(doc, as_of)
        name = doc.get("properties", {}).get(PROP_TABLE_NAME) or self.base.name
        if ordinal == 0:
            schemas = self._schemas(doc)
            schema = schemas[min(schemas)]
            live: list[InternalDataFile] = []
            timestamp_ms = int(doc.get("properties", {}).get(PROP_CREATED_MS, 0))
        else:
            snapshot = self._snapshot_at(doc, ordinal)
            schema = self._schema(doc, snapshot.get("schema-id"))
            live = [self._data_file(e) for e in self._manifest_entries(snapshot) if self._is_live(e)]
            timestamp_ms = int(snapshot.get("timestamp-ms", 0))
        return InternalSnapshot(
            source_commit=self.commit_id(str(ordinal)),
            timestamp_ms=timestamp_ms,
            schema=schema,
            partition_spec=partition_spec_for(schema, self._partition_names(doc)),
            live_files=frozenset(live),
            table_name=name,
        )

    def read_changes_since(
        self, after: Optional[str], schema_hint: Optional[InternalSchema] = None
    ) -> list[TableChange]:
        _, doc = self.read_metadata()
        after_ordinal = 0 if after in (None, "") else self._ordinal(doc, after)
        if after_ordinal > 0:
            self._snapshot_at(doc, after_ordinal)
        changes = []
        for ordinal in range(after_ordinal + 1, len(self._snapshot_log(doc)) + 1):
            snapshot = self._snapshot_at(doc, ordinal)
            snapshot_id = snapshot["snapshot-id"]
            own = [e for e in self._manifest_entries(snapshot) if e.get("snapshot-id") == snapshot_id]
            summary = snapshot.get("summary", {})
            changes.append(TableChange(
                source_commit=self.commit_id(str(ordinal)),
                timestamp_ms=int(snapshot.get("timestamp-ms", 0)),
                files_added=frozenset(self._data_file(e) for e in own if e.get("status") == STATUS_ADDED),
                files_removed=frozenset(
                    e["data-file"]["file-path"] for e in own if e.get("status") == STATUS_DELETED
                ),
                schema=self._schema(doc, snapshot.get("schema-id")),
                operation=self._operation_of(summary),
            ))
        return changes

    def read_source_tags(self) -> dict[str, str]:
        _, doc = self.read_metadata()
        by_id = {s.get("snapshot-id"): s for s in doc.get("snapshots", [])}
        tags = {}
        for ordinal, entry in enumerate(self._snapshot_log(doc), start=1):
            tag = by_id.get(entry["snapshot-id"], {}).get("summary", {}).get(SUMMARY_SOURCE_COMMIT)
            if tag:
                tags[str(ordinal)] = tag
        return tags

    def commit_history(self) -> list[CommitRecord]:
        _, doc = self.read_metadata()
        by_id = {s.get("snapshot-id"): s for s in doc.get("snapshots", [])}
        history = [CommitRecord("0", int(doc.get("properties", {}).get(PROP_CREATED_MS, 0)), "create")]
        for ordinal, entry in enumerate(self._snapshot_log(doc), start=1):
            summary = by_id.get(entry["snapshot-id"], {}).get("summary", {})
            history.append(CommitRecord(
                token=str(ordinal),
                timestamp_ms=int(entry.get("timestamp-ms", 0)),
                operation=summary.get("operation", "expired"),
                source_tag=summary.get(SUMMARY_SOURCE_COMMIT),
            ))
        return history

    def latest_token(self) -> str:
        _, doc = self.read_metadata()
        return str(len(self._snapshot_log(doc)))

    def earliest_token(self) -> str:
        return "0"

    def table_name(self) -> str:
        _, doc = self.read_metadata()
        return doc.get("properties", {}).get(PROP_TABLE_NAME) or self.base.name

    # ------------------------------------------------------------------
    # Writes
    # ------------------------------------------------------------------

    def init(self, table: InternalSnapshot) -> None:
        if self.exists():
            raise XTableError(f"Iceberg table already exists at {self.base}", kind=ErrorKind.TABLE_EXISTS)
        if table.live_files:
            raise XTableError("init takes a snapshot with no live files", kind=ErrorKind.INVALID_CHANGE)
        if self.storage.exists(self._metadata_file(1)):
            # interrupted init: v1 published, hint missing
            logger.warning(f"⚠️ completing interrupted Iceberg init at {self.base}")
            self.storage.write_replace_atomic(self._hint_path, b"1")
            return

        spec_fields = []
        for offset, name in enumerate(table.partition_columns):
            source = table.schema.field_by_name(name)
            spec_fields.append({
                "source-id": source.field_id,
                "field-id": PARTITION_FIELD_ID_START + offset,
                "name": name,
                "transform": "identity",
            })
        doc = {
            "format-version": 1,
            "table-uuid": self.new_uuid(),
            "location": str(self.base),
            "last-updated-ms": table.timestamp_ms,
            "last-column-id": table.schema.max_field_id,
            "last-sequence-number": 0,
            "schemas": [schema_to_iceberg(table.schema)],
            "current-schema-id": table.schema.schema_id,
            "partition-specs": [{"spec-id": 0, "fields": spec_fields}],
            "default-spec-id": 0,
            "properties": {PROP_TABLE_NAME: table.table_name, PROP_CREATED_MS: str(table.timestamp_ms)},
            "current-snapshot-id": -1,
            "snapshots": [],
            "snapshot-log": [],
        }
        self._publish_json(self._metadata_file(1), doc)
        self.storage.write_replace_atomic(self._hint_path, b"1")
        logger.info(f"✅ created Iceberg table {table.table_name} at {self.base}")

    def write_change(self, change: TableChange, source_tag: Optional[str] = None) -> str:
        version, doc = self.read_metadata()
        log = self._snapshot_log(doc)
        current_schema = self._schema(doc, None)

        current_entries: list[dict] = []
        if doc.get("current-snapshot-id", -1) != -1 and log:
            parent = self._snapshot_at(doc, len(log))
            current_entries = [e for e in self._manifest_entries(parent) if self._is_live(e)]
        live = [self._data_file(e) for e in current_entries]
        try:
            apply_change(live, change)
        except XTableError as exc:
            raise XTableError(f"change does not apply to Iceberg table: {exc}", kind=ErrorKind.INVALID_CHANGE) from exc
        for f in change.files_added:
            violation = validate_rel_path(f.rel_path)
            if violation:
                raise XTableError(violation, kind=ErrorKind.INVALID_CHANGE)

        new_doc = copy.deepcopy(doc)
        schema = current_schema
        if change.schema is not None and not change.schema.same_fields(current_schema):
            violations = validate_schema_evolution(current_schema, change.schema)
            if violations:
                raise XTableError("; ".join(violations), kind=ErrorKind.INVALID_CHANGE)
            schema = change.schema
            if schema.schema_id not in self._schemas(doc):
                new_doc["schemas"].append(schema_to_iceberg(schema))
            new_doc["current-schema-id"] = schema.schema_id
            new_doc["last-column-id"] = max(doc.get("last-column-id", 0), schema.max_field_id)

        snapshot_id = self.rng.randint(1, MAX_SNAPSHOT_ID)
        entries = []
        for entry in sorted(current_entries, key=lambda e: e["data-file"]["file-path"]):
            if entry["data-file"]["file-path"] in change.files_removed:
                entries.append({"status": STATUS_DELETED, "snapshot-id": snapshot_id, "data-file": entry["data-file"]})
            else:
                entries.append({"status": STATUS_EXISTING, "snapshot-id": entry["snapshot-id"], "data-file": entry["data-file"]})
        for f in sorted(change.files_added, key=lambda f: f.rel_path):
            entries.append({"status": STATUS_ADDED, "snapshot-id": snapshot_id, "data-file": self._data_file_doc(f)})

        counts = {status: sum(1 for e in entries if e["status"] == status)
                  for status in (STATUS_ADDED, STATUS_EXISTING, STATUS_DELETED)}
        manifest_rel = f"{self.metadata_dir}/manifest-{snapshot_id}.json"
        list_rel = f"{self.metadata_dir}/snap-{snapshot_id}-manifest-list.json"
        sequence_number = int(doc.get("last-sequence-number", 0)) + 1

        summary = {
            "operation": _NATIVE_OPERATIONS[change.operation],
            SUMMARY_OPERATION: change.operation.value,
            "added-data-files": str(counts[STATUS_ADDED]),
            "deleted-data-files": str(counts[STATUS_DELETED]),
            "total-data-files": str(counts[STATUS_ADDED] + counts[STATUS_EXISTING]),
        }
        if source_tag:
            summary[SUMMARY_SOURCE_COMMIT] = source_tag
        snapshot: dict[str, Any] = {
            "snapshot-id": snapshot_id,
            "sequence-number": sequence_number,
            "timestamp-ms": change.timestamp_ms,
            "manifest-list": list_rel,
            "schema-id": schema.schema_id,
            "summary": summary,
        }
        if doc.get("current-snapshot-id", -1) != -1:
            snapshot["parent-snapshot-id"] = doc["current-snapshot-id"]

        new_doc["snapshots"].append(snapshot)
        new_doc["snapshot-log"].append({"timestamp-ms": change.timestamp_ms, "snapshot-id": snapshot_id})
        new_doc["current-snapshot-id"] = snapshot_id
        new_doc["last-sequence-number"] = sequence_number
        new_doc["last-updated-ms"] = change.timestamp_ms

        # manifest, manifest list, root metadata, then the hint
        self._publish_json(self.base.join(manifest_rel), {
            "snapshot-id": snapshot_id,
            "schema-id": schema.schema_id,
            "partition-spec-id": new_doc.get("default-spec-id", 0),
            "entries": entries,
        })
        self._publish_json(self.base.join(list_rel), {
            "snapshot-id": snapshot_id,
            "manifests": [{
                "manifest-path": manifest_rel,
                "added-snapshot-id": snapshot_id,
                "added-data-files-count": counts[STATUS_ADDED],
                "existing-data-files-count": counts[STATUS_EXISTING],
                "deleted-data-files-count": counts[STATUS_DELETED],
            }],
        })
        self._publish_json(self._metadata_file(version + 1), new_doc)
        self.storage.write_replace_atomic(self._hint_path, str(version + 1).encode("ascii"))
        logger.debug(f"Iceberg {self.base} v{version + 1}: snapshot {snapshot_id}")
        return str(len(log) + 1)


# =============================================================================
# Module-level operations
# =============================================================================

def iceberg_read_snapshot(storage: Storage, base: StoragePath, as_of_ordinal: Optional[int] = None) -> InternalSnapshot:
    return IcebergClient(storage, base).read_snapshot(None if as_of_ordinal is None else str(as_of_ordinal))


def iceberg_read_changes_since(storage: Storage, base: StoragePath, after_ordinal: int) -> list[TableChange]:
    return IcebergClient(storage, base).read_changes_since(str(after_ordinal))


def iceberg_write_change(storage: Storage, base: StoragePath, change: TableChange, source_tag: Optional[str] = None) -> int:
    return int(IcebergClient(storage, base).write_change(change, source_tag))


def iceberg_init(storage: Storage, base: StoragePath, table: InternalSnapshot) -> None:
    IcebergClient(storage, base).init(table)


def iceberg_read_source_tags(storage: Storage, base: StoragePath) -> dict[int, str]:
    return {int(k): tag for k, tag in IcebergClient(storage, base).read_source_tags().items()}
