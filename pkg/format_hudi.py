"""
Hudi-style copy-on-write timeline reader/writer

Layout under ``<base>/.hoodie/``:
    hoodie.properties           sorted key=value lines
    <instant>.commit            completed commit (canonical JSON)
    <instant>.replacecommit     commit that also retires whole file groups

Data files are named ``<partition>/<fileId>_<writeToken>_<instant>.data``.
A file group is the chain of slices sharing a fileId; its live slice is the
newest one unless a replacecommit retired the group.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Any, Optional

import pytz

from config import HUDI_METADATA_DIR
from errors import ErrorKind, XTableError
from format_base import CommitRecord, FormatClient, hive_partition_path, parse_hive_partition_path
from internal_model import (
    InternalDataFile,
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

PROPERTIES_FILE = "hoodie.properties"
CREATE_TOKEN = "0" * 17
WRITE_TOKEN = "1-0-1"
ACTION_COMMIT = "commit"
ACTION_REPLACE = "replacecommit"

_RE_INSTANT_FILE = re.compile(r"^(\d{17})\.(commit|replacecommit)$")
_RE_TIMELINE_LIKE = re.compile(r"^[^.]+\.(commit|replacecommit)$")
_RE_BASE_FILE = re.compile(
    r"^(?P<file_id>[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12})"
    r"_(?P<write_token>\d+-\d+-\d+)_(?P<instant>\d{17})\.data$"
)

PROP_NAME = "hoodie.table.name"
PROP_TYPE = "hoodie.table.type"
PROP_PARTITION_FIELDS = "hoodie.table.partition.fields"
PROP_CREATE_SCHEMA = "hoodie.table.create.schema"
PROP_VERSION = "hoodie.table.version"
PROP_CREATED_MS = "xtable.create.timestamp.ms"

EXTRA_SCHEMA = "schema"
EXTRA_SOURCE_COMMIT = "xtable.source.commit"
EXTRA_OPERATION = "xtable.operation"
# replacecommit: partition -> {fileId: instant of the retired slice}
REPLACE_PREV_COMMITS = "partitionToReplacePrevCommits"

_NATIVE_OPERATIONS = {
    Operation.APPEND: "INSERT",
    Operation.DELETE: "DELETE",
    Operation.OVERWRITE: "UPSERT",
    Operation.SCHEMA_CHANGE: "UPSERT",
}
_INTERNAL_OPERATIONS = {"INSERT": Operation.APPEND, "DELETE": Operation.DELETE, "UPSERT": Operation.OVERWRITE}

_EPOCH = datetime(1970, 1, 1, tzinfo=pytz.UTC)


def format_instant(timestamp_ms: int) -> str:
    """Epoch milliseconds -> ``yyyyMMddHHmmssSSS`` in UTC."""
    moment = _EPOCH + timedelta(milliseconds=timestamp_ms)
    return moment.strftime("%Y%m%d%H%M%S") + f"{moment.microsecond // 1000:03d}"


def parse_instant(instant: str) -> int:
    """Inverse of format_instant."""
    if instant == CREATE_TOKEN:
        return 0
    try:
        moment = datetime.strptime(instant[:14], "%Y%m%d%H%M%S").replace(tzinfo=pytz.UTC)
        millis = int(instant[14:17])
    except ValueError as exc:
        raise XTableError(f"unparseable instant {instant!r}", kind=ErrorKind.MALFORMED_TIMELINE) from exc
    return int((moment - _EPOCH).total_seconds()) * 1000 + millis


def next_instant_after(instant: str) -> str:
    return format_instant(parse_instant(instant) + 1)


def base_file_name(file_id: str, instant: str) -> str:
    return f"{file_id}_{WRITE_TOKEN}_{instant}.data"


def file_id_of(rel_path: str) -> Optional[str]:
    match = _RE_BASE_FILE.match(rel_path.rsplit("/", 1)[-1])
    return match.group("file_id") if match else None


@dataclass(frozen=True)
class FileSlice:
    file_id: str
    partition_path: str
    rel_path: str
    instant: str
    num_writes: int
    size: int


def parse_properties(text: str) -> dict[str, str]:
    props = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if sep:
            props[key.strip()] = value.strip()
    return props


def render_properties(props: dict[str, str]) -> bytes:
    return "".join(f"{key}={props[key]}\n" for key in sorted(props)).encode("utf-8")


class HudiClient(FormatClient):
    format = TableFormat.HUDI
    metadata_dir = HUDI_METADATA_DIR

    @property
    def _properties_path(self) -> StoragePath:
        return self.metadata_path.join(PROPERTIES_FILE)

    def exists(self) -> bool:
        return self.storage.exists(self._properties_path)

    def properties(self) -> dict[str, str]:
        key = str(self._properties_path)
        if key not in self._cache:
            if not self.exists():
                raise XTableError(f"no Hudi table at {self.base}", kind=ErrorKind.NO_TABLE)
            try:
                text = self.storage.read_file(self._properties_path).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise XTableError(
                    f"{PROPERTIES_FILE} is not UTF-8: {exc}", kind=ErrorKind.MALFORMED_TIMELINE
                ) from exc
            self._cache[key] = parse_properties(text)
        return self._cache[key]

    def partition_columns(self) -> list[str]:
        raw = self.properties().get(PROP_PARTITION_FIELDS, "")
        return [c.strip() for c in raw.split(",") if c.strip()]

    def _create_schema(self) -> InternalSchema:
        raw = self.properties().get(PROP_CREATE_SCHEMA)
        if not raw:
            raise XTableError(f"{PROPERTIES_FILE} has no {PROP_CREATE_SCHEMA}", kind=ErrorKind.MALFORMED_TIMELINE)
        try:
            return InternalSchema.from_json(raw)
        except (ValueError, KeyError, TypeError) as exc:
            raise XTableError(f"bad {PROP_CREATE_SCHEMA}: {exc}", kind=ErrorKind.MALFORMED_TIMELINE) from exc

    # ------------------------------------------------------------------
    # Timeline
    # ------------------------------------------------------------------

    def timeline(self) -> list[tuple[str, str]]:
        """Completed (instant, action) pairs in instant order."""
        if not self.exists():
            raise XTableError(f"no Hudi table at {self.base}", kind=ErrorKind.NO_TABLE)
        instants: dict[str, str] = {}
        for name in self.storage.list_dir(self.metadata_path):
            match = _RE_INSTANT_FILE.match(name)
            if match is None:
                if _RE_TIMELINE_LIKE.match(name):
                    raise XTableError(f"unparseable instant file {name}", kind=ErrorKind.MALFORMED_TIMELINE)
                continue
            instant, action = match.groups()
            if instant in instants:
                raise XTableError(f"instant {instant} completed twice", kind=ErrorKind.MALFORMED_TIMELINE)
            instants[instant] = action
        return sorted(instants.items())

    def instant_metadata(self, instant: str, action: str) -> dict:
        doc = self._read_json(self.metadata_path.join(f"{instant}.{action}"), kind=ErrorKind.MALFORMED_TIMELINE)
        if not isinstance(doc, dict):
            raise XTableError(f"{instant}.{action} is not commit metadata", kind=ErrorKind.MALFORMED_TIMELINE)
        return doc

    def _schema_of(self, meta: dict) -> Optional[InternalSchema]:
        raw = meta.get("extraMetadata", {}).get(EXTRA_SCHEMA)
        if not raw:
            return None
        try:
            return InternalSchema.from_json(raw)
        except (ValueError, KeyError, TypeError) as exc:
            raise XTableError(f"bad schema in commit metadata: {exc}", kind=ErrorKind.MALFORMED_TIMELINE) from exc

    def _schema_at(self, timeline: list[tuple[str, str]], upto: int) -> InternalSchema:
        """Schema in effect after timeline[upto] (upto=-1: at creation)."""
        for instant, action in reversed(timeline[:upto + 1]):
            schema = self._schema_of(self.instant_metadata(instant, action))
            if schema is not None:
                return schema
        return self._create_schema()

    @staticmethod
    def _slices(meta: dict, instant: str) -> list[FileSlice]:
        slices = []
        for partition_path, stats in sorted(meta.get("partitionToWriteStats", {}).items()):
            for stat in stats:
                try:
                    slices.append(FileSlice(
                        file_id=stat["fileId"],
                        partition_path=partition_path,
                        rel_path=stat["path"],
                        instant=instant,
                        num_writes=int(stat.get("numWrites", 0)),
                        size=int(stat.get("fileSizeInBytes", 0)),
                    ))
                except (KeyError, TypeError, ValueError) as exc:
                    raise XTableError(
                        f"bad write stat in instant {instant}: {exc}", kind=ErrorKind.MALFORMED_TIMELINE
                    ) from exc
        return slices

    @staticmethod
    def _replaced(meta: dict) -> list[str]:
        return [fid for _, ids in sorted(meta.get("partitionToReplaceFileIds", {}).items()) for fid in ids]

    @staticmethod
    def _replaced_prev_commits(meta: dict) -> dict[str, str]:
        """fileId -> instant of its retired slice, when the writer recorded it."""
        prev = {}
        for _, by_file_id in sorted(meta.get(REPLACE_PREV_COMMITS, {}).items()):
            if not isinstance(by_file_id, dict):
                raise XTableError(f"bad {REPLACE_PREV_COMMITS} entry", kind=ErrorKind.MALFORMED_TIMELINE)
            prev.update({fid: instant for fid, instant in by_file_id.items() if instant})
        return prev

    def _fold(self, timeline: list[tuple[str, str]]) -> dict[str, FileSlice]:
        groups: dict[str, FileSlice] = {}
        for instant, action in timeline:
            meta = self.instant_metadata(instant, action)
            for file_slice in self._slices(meta, instant):
                groups[file_slice.file_id] = file_slice
            for file_id in self._replaced(meta):
                groups.pop(file_id, None)
        return groups

    def _data_file(self, file_slice: FileSlice) -> InternalDataFile:
        return InternalDataFile(
            rel_path=file_slice.rel_path,
            partition_values=parse_hive_partition_path(file_slice.partition_path, self.partition_columns()),
            record_count=file_slice.num_writes,
            file_size_bytes=file_slice.size,
            column_stats=None,
        )

    @staticmethod
    def _operation_of(meta: dict) -> Operation:
        label = meta.get("extraMetadata", {}).get(EXTRA_OPERATION)
        if label in Operation.__members__:
            return Operation[label]
        return _INTERNAL_OPERATIONS.get(meta.get("operationType", ""), Operation.APPEND)

    # ------------------------------------------------------------------
    # Reads
    # ------------------------------------------------------------------

    def read_snapshot(self, as_of: Optional[str] = None) -> InternalSnapshot:
        timeline = self.timeline()
        if as_of in (None, ""):
            visible = timeline
        else:
            visible = [(i, a) for i, a in timeline if i <= as_of]
        groups = self._fold(visible)
        schema = self._schema_at(visible, len(visible) - 1)
        if visible:
            token = visible[-1][0]
            timestamp_ms = parse_instant(token)
        else:
            token = CREATE_TOKEN
            timestamp_ms = int(self.properties().get(PROP_CREATED_MS, 0))
        return InternalSnapshot(
            source_commit=self.commit_id(token),
            timestamp_ms=timestamp_ms,
            schema=schema,
            partition_spec=partition_spec_for(schema, self.partition_columns()),
            live_files=frozenset(self._data_file(s) for s in groups.values()),
            table_name=self.table_name(),
        )

    def read_changes_since(
        self, after: Optional[str], schema_hint: Optional[InternalSchema] = None
    ) -> list[TableChange]:
        timeline = self.timeline()
        instants = [i for i, _ in timeline]
        if after in (None, "", CREATE_TOKEN):
            start = 0
        elif after in instants:
            start = instants.index(after) + 1
        elif instants and after > instants[-1]:
            raise XTableError(f"instant {after} is ahead of latest {instants[-1]}", kind=ErrorKind.VERSION_AHEAD)
        elif not instants:
            raise XTableError(f"instant {after} is ahead of an empty timeline", kind=ErrorKind.VERSION_AHEAD)
        else:
            raise XTableError(f"instant {after} is not on the timeline", kind=ErrorKind.INSTANT_NOT_FOUND)

        schema = schema_hint
        # fileId -> path of its latest slice, filled lazily
        known: dict[str, str] = {}
        changes = []
        for index in range(start, len(timeline)):
            instant, action = timeline[index]
            meta = self.instant_metadata(instant, action)
            if schema is None or self._schema_of(meta) is not None:
                schema = self._schema_at(timeline, index)

            slices = self._slices(meta, instant)
            removed = set()
            for file_slice in slices:
                prev = file_slice_prev_commit(meta, file_slice.file_id)
                if prev:
                    removed.add(self._slice_path(timeline, file_slice.file_id, prev))
            replaced_prev = self._replaced_prev_commits(meta)
            for file_id in self._replaced(meta):
                if file_id not in known and file_id in replaced_prev:
                    removed.add(self._slice_path(timeline, file_id, replaced_prev[file_id]))
                else:
                    removed.add(self._latest_slice_path(timeline, index, file_id, known))
            for file_slice in slices:
                known[file_slice.file_id] = file_slice.rel_path

            changes.append(TableChange(
                source_commit=self.commit_id(instant),
                timestamp_ms=parse_instant(instant),
                files_added=frozenset(self._data_file(s) for s in slices),
                files_removed=frozenset(removed),
                schema=schema,
                operation=self._operation_of(meta),
            ))
        return changes

    def _slice_path(self, timeline: list[tuple[str, str]], file_id: str, instant: str) -> str:
        actions = dict(timeline)
        if instant not in actions:
            raise XTableError(
                f"prevCommit {instant} of file group {file_id} is not on the timeline",
                kind=ErrorKind.MALFORMED_TIMELINE,
            )
        for file_slice in self._slices(self.instant_metadata(instant, actions[instant]), instant):
            if file_slice.file_id == file_id:
                return file_slice.rel_path
        raise XTableError(
            f"instant {instant} wrote no slice for file group {file_id}", kind=ErrorKind.MALFORMED_TIMELINE
        )

    def _latest_slice_path(self, timeline: list[tuple[str, str]], index: int, file_id: str, known: dict[str, str]) -> str:
        if file_id in known:
            return known[file_id]
        for instant, action in reversed(timeline[:index]):
            for file_slice in self._slices(self.instant_metadata(instant, action), instant):
                if file_slice.file_id == file_id:
                    return file_slice.rel_path
        raise XTableError(f"replaced file group {file_id} has no slice", kind=ErrorKind.MALFORMED_TIMELINE)

    def read_source_tags(self) -> dict[str, str]:
        tags = {}
        for instant, action in self.timeline():
            tag = self.instant_metadata(instant, action).get("extraMetadata", {}).get(EXTRA_SOURCE_COMMIT)
            if tag:
                tags[instant] = tag
        return tags

    def commit_history(self) -> list[CommitRecord]:
        history = [CommitRecord(CREATE_TOKEN, int(self.properties().get(PROP_CREATED_MS, 0)), "CREATE")]
        for instant, action in self.timeline():
            meta = self.instant_metadata(instant, action)
            history.append(CommitRecord(
                token=instant,
                timestamp_ms=parse_instant(instant),
                operation=f"{meta.get('operationType', '')} ({action})",
                source_tag=meta.get("extraMetadata", {}).get(EXTRA_SOURCE_COMMIT),
            ))
        return history

    def latest_token(self) -> str:
        timeline = self.timeline()
        return timeline[-1][0] if timeline else CREATE_TOKEN

    def earliest_token(self) -> str:
        return CREATE_TOKEN

    def table_name(self) -> str:
        return self.properties().get(PROP_NAME) or self.base.name

    def next_instant(self, timestamp_ms: int) -> str:
        """Instant the next write_change will allocate."""
        timeline = self.timeline()
        if not timeline:
            return format_instant(timestamp_ms)
        return next_instant_after(timeline[-1][0])

    # ------------------------------------------------------------------
    # Writes
    # ------------------------------------------------------------------

    def init(self, table: InternalSnapshot) -> None:
        if self.exists():
            raise XTableError(f"Hudi table already exists at {self.base}", kind=ErrorKind.TABLE_EXISTS)
        if table.live_files:
            raise XTableError("init takes a snapshot with no live files", kind=ErrorKind.INVALID_CHANGE)
        props = {
            PROP_NAME: table.table_name,
            PROP_TYPE: "COPY_ON_WRITE",
            PROP_PARTITION_FIELDS: ",".join(table.partition_columns),
            PROP_CREATE_SCHEMA: table.schema.to_json(),
            PROP_VERSION: "6",
            PROP_CREATED_MS: str(table.timestamp_ms),
        }
        self._publish(self._properties_path, render_properties(props))
        logger.info(f"✅ created Hudi table {table.table_name} at {self.base}")

    def write_change(self, change: TableChange, source_tag: Optional[str] = None) -> str:
        timeline = self.timeline()
        groups = self._fold(timeline)
        by_path = {s.rel_path: s for s in groups.values()}
        columns = self.partition_columns()

        for path in sorted(change.files_removed):
            if path not in by_path:
                raise XTableError(
                    f"removed path {path} belongs to no live file group", kind=ErrorKind.UNPAIRABLE_REMOVE
                )
        try:
            apply_change([self._data_file(s) for s in groups.values()], change)
        except XTableError as exc:
            raise XTableError(f"change does not apply to Hudi table: {exc}", kind=ErrorKind.INVALID_CHANGE) from exc
        for f in change.files_added:
            violation = validate_rel_path(f.rel_path)
            if violation:
                raise XTableError(violation, kind=ErrorKind.INVALID_CHANGE)

        current_schema = self._schema_at(timeline, len(timeline) - 1)
        schema = current_schema
        if change.schema is not None and not change.schema.same_fields(current_schema):
            violations = validate_schema_evolution(current_schema, change.schema)
            if violations:
                raise XTableError("; ".join(violations), kind=ErrorKind.INVALID_CHANGE)
            schema = change.schema

        instant = next_instant_after(timeline[-1][0]) if timeline else format_instant(change.timestamp_ms)

        removed_by_partition: dict[str, list[FileSlice]] = {}
        for path in sorted(change.files_removed):
            file_slice = by_path[path]
            removed_by_partition.setdefault(file_slice.partition_path, []).append(file_slice)
        added_by_partition: dict[str, list[InternalDataFile]] = {}
        for f in sorted(change.files_added, key=lambda f: f.rel_path):
            added_by_partition.setdefault(hive_partition_path(columns, f.partitions), []).append(f)

        used_ids = set(groups)
        write_stats: dict[str, list[dict]] = {}
        replaced: dict[str, list[str]] = {}
        replaced_prev: dict[str, dict[str, str]] = {}
        for partition_path in sorted(set(removed_by_partition) | set(added_by_partition)):
            pairs, leftover_removed, leftover_added = pair_slices(
                removed_by_partition.get(partition_path, []), added_by_partition.get(partition_path, [])
            )
            stats = []
            for old, f in pairs:
                stats.append(self._write_stat(old.file_id, f, old.instant))
            for f in leftover_added:
                file_id = file_id_of(f.rel_path)
                if file_id is None or file_id in used_ids:
                    file_id = self.new_uuid()
                used_ids.add(file_id)
                stats.append(self._write_stat(file_id, f, None))
            if stats:
                write_stats[partition_path] = stats
            if leftover_removed:
                replaced[partition_path] = sorted(s.file_id for s in leftover_removed)
                replaced_prev[partition_path] = {s.file_id: s.instant for s in leftover_removed}

        extra = {EXTRA_SCHEMA: schema.to_json(), EXTRA_OPERATION: change.operation.value}
        if source_tag:
            extra[EXTRA_SOURCE_COMMIT] = source_tag
        meta: dict[str, Any] = {
            "operationType": _NATIVE_OPERATIONS[change.operation],
            "partitionToWriteStats": write_stats,
            "extraMetadata": extra,
        }
        action = ACTION_COMMIT
        if replaced:
            action = ACTION_REPLACE
            meta["partitionToReplaceFileIds"] = replaced
            meta[REPLACE_PREV_COMMITS] = replaced_prev
        self._publish_json(self.metadata_path.join(f"{instant}.{action}"), meta)
        logger.debug(f"Hudi {self.base} {instant}.{action}: {len(change.files_added)} written")
        return instant

    @staticmethod
    def _write_stat(file_id: str, f: InternalDataFile, prev_commit: Optional[str]) -> dict:
        return {
            "fileId": file_id,
            "path": f.rel_path,
            "numWrites": f.record_count,
            "fileSizeInBytes": f.file_size_bytes,
            "prevCommit": prev_commit,
        }


def file_slice_prev_commit(meta: dict, file_id: str) -> Optional[str]:
    for stats in meta.get("partitionToWriteStats", {}).values():
        for stat in stats:
            if stat.get("fileId") == file_id:
                return stat.get("prevCommit") or None
    return None


def pair_slices(
    removed: list[FileSlice], added: list[InternalDataFile]
) -> tuple[list[tuple[FileSlice, InternalDataFile]], list[FileSlice], list[InternalDataFile]]:
    """
    Pair removed slices with added files of one partition: first by the
    fileId encoded in the added file's name, then in lexicographic order.
    """
    pairs = []
    remaining_removed = {s.file_id: s for s in sorted(removed, key=lambda s: s.rel_path)}
    remaining_added = []
    for f in sorted(added, key=lambda f: f.rel_path):
        file_id = file_id_of(f.rel_path)
        if file_id is not None and file_id in remaining_removed:
            pairs.append((remaining_removed.pop(file_id), f))
        else:
            remaining_added.append(f)
    leftover_removed = sorted(remaining_removed.values(), key=lambda s: s.rel_path)
    count = min(len(leftover_removed), len(remaining_added))
    pairs.extend(zip(leftover_removed[:count], remaining_added[:count]))
    return pairs, leftover_removed[count:], remaining_added[count:]


# =============================================================================
# Module-level operations
# =============================================================================

def hudi_read_snapshot(storage: Storage, base: StoragePath, as_of_instant: Optional[str] = None) -> InternalSnapshot:
    return HudiClient(storage, base).read_snapshot(as_of_instant)


def hudi_read_changes_since(storage: Storage, base: StoragePath, after_instant: str) -> list[TableChange]:
    return HudiClient(storage, base).read_changes_since(after_instant)


def hudi_write_change(storage: Storage, base: StoragePath, change: TableChange, source_tag: Optional[str] = None) -> str:
    return HudiClient(storage, base).write_change(change, source_tag)


def hudi_init(storage: Storage, base: StoragePath, table: InternalSnapshot) -> None:
    HudiClient(storage, base).init(table)


def hudi_read_source_tags(storage: Storage, base: StoragePath) -> dict[str, str]:
    return HudiClient(storage, base).read_source_tags()
