"""
Sync orchestration: detect, plan, translate, publish, persist state

Source tags embedded in target commits are the durable idempotency anchor;
the per-pair state file under ``<base>/_xtable/`` only makes planning
incremental. Deleting or corrupting it at any time is safe.
"""
from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import config
from errors import ErrorKind, XTableError
from format_base import FormatClient, get_format_client
from internal_model import (
    InternalSchema,
    InternalSnapshot,
    TableChange,
    TableFormat,
    diff_filesets,
    empty_snapshot_like,
)
from storage import LocalStorage, Storage, StoragePath
from telemetry import EventLog, Phase, TelemetryEvent
from utils import canonical_json_bytes, redact_secrets

logger = logging.getLogger(__name__)

# Reader errors meaning the recorded position can no longer be replayed
_STALE_KINDS = (ErrorKind.SNAPSHOT_EXPIRED, ErrorKind.INSTANT_NOT_FOUND, ErrorKind.VERSION_AHEAD)


class PlanMode(str, Enum):
    FULL_SNAPSHOT = "FULL_SNAPSHOT"
    INCREMENTAL = "INCREMENTAL"


class PlanReason(str, Enum):
    NO_STATE = "NO_STATE"
    STATE_STALE_SOURCE_UNAVAILABLE = "STATE_STALE_SOURCE_UNAVAILABLE"
    BACKLOG_AVAILABLE = "BACKLOG_AVAILABLE"
    EMPTY = "EMPTY"
    FORCED_FULL = "FORCED_FULL"


class CommitOutcome(str, Enum):
    TRANSLATED = "TRANSLATED"
    SKIPPED_ALREADY_PRESENT = "SKIPPED_ALREADY_PRESENT"


# =============================================================================
# Config / state types
# =============================================================================

@dataclass(frozen=True)
class DatasetConfig:
    table_base_path: StoragePath
    table_name: Optional[str] = None


@dataclass(frozen=True)
class SyncConfig:
    source_format: TableFormat
    target_formats: tuple[TableFormat, ...]
    datasets: tuple[DatasetConfig, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "target_formats", tuple(self.target_formats))
        object.__setattr__(self, "datasets", tuple(self.datasets))

    def validate(self) -> None:
        if not self.target_formats:
            raise XTableError("targetFormats must not be empty", kind=ErrorKind.CONFIG_INVALID)
        if self.source_format in self.target_formats:
            raise XTableError(
                f"source format {self.source_format.value} is also listed as a target", kind=ErrorKind.CONFIG_INVALID
            )
        if len(set(self.target_formats)) != len(self.target_formats):
            raise XTableError("targetFormats lists a format twice", kind=ErrorKind.CONFIG_INVALID)
        paths = [str(d.table_base_path) for d in self.datasets]
        if len(set(paths)) != len(paths):
            raise XTableError("dataset tableBasePath values must be distinct", kind=ErrorKind.CONFIG_INVALID)


@dataclass
class SyncState:
    source_format: TableFormat
    target_format: TableFormat
    last_translated_source_commit: str = ""
    commit_map: dict[str, str] = field(default_factory=dict)
    state_version: int = config.STATE_VERSION
    source_schema: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "source_format": self.source_format.value,
            "target_format": self.target_format.value,
            "last_translated_source_commit": self.last_translated_source_commit,
            "commit_map": dict(self.commit_map),
            "state_version": self.state_version,
            "source_schema": self.source_schema,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SyncState":
        return cls(
            source_format=TableFormat.parse(data["source_format"]),
            target_format=TableFormat.parse(data["target_format"]),
            last_translated_source_commit=str(data.get("last_translated_source_commit", "")),
            commit_map={str(k): str(v) for k, v in data.get("commit_map", {}).items()},
            state_version=int(data.get("state_version", config.STATE_VERSION)),
            source_schema=data.get("source_schema"),
        )

    @property
    def schema_hint(self) -> Optional[InternalSchema]:
        if not self.source_schema:
            return None
        try:
            return InternalSchema.from_dict(self.source_schema)
        except (KeyError, TypeError, ValueError):
            return None

    def record(self, source_token: str, target_token: str, schema: Optional[InternalSchema]) -> None:
        self.last_translated_source_commit = source_token
        self.commit_map[source_token] = target_token
        if schema is not None:
            self.source_schema = schema.to_dict()


def state_path(base: StoragePath, source_format: TableFormat, target_format: TableFormat) -> StoragePath:
    return base.join(config.XTABLE_STATE_DIR, f"state-{source_format.value}-to-{target_format.value}.json")


def load_state(
    storage: Storage, base: StoragePath, source_format: TableFormat, target_format: TableFormat
) -> Optional[SyncState]:
    """Stored state, or None when absent or unreadable."""
    path = state_path(base, source_format, target_format)
    if not storage.exists(path):
        return None
    try:
        state = SyncState.from_dict(json.loads(storage.read_file(path).decode("utf-8")))
    except (XTableError, UnicodeDecodeError, ValueError, KeyError, TypeError) as e:
        logger.warning(f"⚠️ ignoring unreadable sync state {redact_secrets(str(path))}: {e}")
        return None
    if state.state_version > config.STATE_VERSION:
        logger.warning(f"⚠️ sync state {redact_secrets(str(path))} has newer version {state.state_version}; ignoring")
        return None
    if (state.source_format, state.target_format) != (source_format, target_format):
        logger.warning(f"⚠️ sync state {redact_secrets(str(path))} names a different format pair; ignoring")
        return None
    return state


def save_state(storage: Storage, base: StoragePath, state: SyncState) -> None:
    path = state_path(base, state.source_format, state.target_format)
    try:
        storage.write_replace_atomic(path, canonical_json_bytes(state.to_dict()))
    except XTableError as exc:
        raise XTableError(f"could not save sync state: {exc}", kind=ErrorKind.STATE_IO_FAILURE) from exc


class StateStore:
    """State file of one (table, source, target) triple."""

    def __init__(self, storage: Storage, base: StoragePath, source_format: TableFormat, target_format: TableFormat):
        self.storage = storage
        self.base = base
        self.source_format = source_format
        self.target_format = target_format

    def load(self) -> Optional[SyncState]:
        return load_state(self.storage, self.base, self.source_format, self.target_format)

    def save(self, state: SyncState) -> None:
        save_state(self.storage, self.base, state)

    def fresh(self) -> SyncState:
        return SyncState(self.source_format, self.target_format)


# =============================================================================
# Planning
# =============================================================================

@dataclass
class SyncPlan:
    mode: PlanMode
    reason: PlanReason
    backlog: list[TableChange] = field(default_factory=list)
    snapshot: Optional[InternalSnapshot] = None
    # Table to create before replaying a backlog into a missing target
    init_snapshot: Optional[InternalSnapshot] = None

    @property
    def work_items(self) -> int:
        if self.mode is PlanMode.FULL_SNAPSHOT:
            return 0 if self.snapshot is None else 1
        return len(self.backlog)


def detect_format(storage: Storage, base: StoragePath) -> set[TableFormat]:
    """Formats whose root metadata exists at *base*; empty set means none."""
    found = set()
    for table_format in TableFormat:
        if get_format_client(table_format, storage, base).exists():
            found.add(table_format)
    return found


def _full_plan(source: FormatClient, reason: PlanReason) -> SyncPlan:
    return SyncPlan(PlanMode.FULL_SNAPSHOT, reason, snapshot=source.read_snapshot())


def plan_sync(
    source: FormatClient,
    target: FormatClient,
    state: Optional[SyncState],
    mode_override: Optional[PlanMode] = None,
) -> SyncPlan:
    """
    Decide how to bring *target* up to date with *source*.

    Raises:
        XTableError(SOURCE_UNREADABLE): the source metadata cannot be read
    """
    try:
        if mode_override is PlanMode.FULL_SNAPSHOT:
            return _full_plan(source, PlanReason.FORCED_FULL)

        target_ready = target.exists()
        if state is None or not target_ready:
            if mode_override is PlanMode.INCREMENTAL:
                start = source.earliest_token()
                return SyncPlan(
                    PlanMode.INCREMENTAL,
                    PlanReason.NO_STATE,
                    backlog=source.read_changes_since(start),
                    init_snapshot=None if target_ready else source.read_snapshot(start),
                )
            return _full_plan(source, PlanReason.NO_STATE)

        latest = source.latest_token()
        if state.last_translated_source_commit == latest:
            return SyncPlan(PlanMode.INCREMENTAL, PlanReason.EMPTY)
        try:
            backlog = source.read_changes_since(state.last_translated_source_commit, state.schema_hint)
        except XTableError as exc:
            if exc.kind not in _STALE_KINDS:
                raise
            logger.warning(f"⚠️ recorded position {state.last_translated_source_commit!r} unusable: {exc}")
            return _full_plan(source, PlanReason.STATE_STALE_SOURCE_UNAVAILABLE)
        except ValueError as exc:
            logger.warning(f"⚠️ recorded position {state.last_translated_source_commit!r} unparseable: {exc}")
            return _full_plan(source, PlanReason.STATE_STALE_SOURCE_UNAVAILABLE)
        if not backlog:
            return SyncPlan(PlanMode.INCREMENTAL, PlanReason.EMPTY)
        return SyncPlan(PlanMode.INCREMENTAL, PlanReason.BACKLOG_AVAILABLE, backlog=backlog)
    except XTableError as exc:
        raise XTableError(f"cannot read {source.format.value} source: {exc}", kind=ErrorKind.SOURCE_UNREADABLE) from exc


# =============================================================================
# Execution
# =============================================================================

@dataclass
class CommitResult:
    source_token: str
    outcome: CommitOutcome
    target_token: str


@dataclass
class SyncReport:
    table: str
    base: str
    source_format: TableFormat
    target_format: TableFormat
    mode: Optional[PlanMode] = None
    reason: Optional[PlanReason] = None
    results: list[CommitResult] = field(default_factory=list)
    events: list[TelemetryEvent] = field(default_factory=list)
    error: Optional[str] = None
    error_kind: Optional[ErrorKind] = None

    @property
    def commits_translated(self) -> int:
        return sum(1 for r in self.results if r.outcome is CommitOutcome.TRANSLATED)

    @property
    def commits_skipped(self) -> int:
        return sum(1 for r in self.results if r.outcome is CommitOutcome.SKIPPED_ALREADY_PRESENT)

    @property
    def ok(self) -> bool:
        return self.error is None

    def summary(self) -> str:
        head = f"{self.table} {self.source_format.value} -> {self.target_format.value}"
        if self.error:
            return f"{head}: ERROR {self.error}"
        mode = self.mode.value if self.mode else "-"
        reason = self.reason.value if self.reason else "-"
        return (
            f"{head}: {mode} ({reason}), {self.commits_translated} commits translated, "
            f"{self.commits_skipped} skipped"
        )


def _publish(target: FormatClient, change: TableChange, tag: str, tags: dict[str, str]) -> tuple[CommitOutcome, str]:
    """write_change with one re-plan after a lost race."""
    for attempt in (1, 2):
        try:
            return CommitOutcome.TRANSLATED, target.write_change(change, tag)
        except XTableError as exc:
            if exc.kind is not ErrorKind.CONCURRENT_COMMIT:
                raise
            logger.warning(f"⚠️ {target.format.value} commit for {tag} lost a race (attempt {attempt})")
            tags.update(target.source_tag_index())
            if tag in tags:
                return CommitOutcome.SKIPPED_ALREADY_PRESENT, tags[tag]
            if attempt == 2:
                raise XTableError(
                    f"{target.format.value} publish for {tag} conflicted twice: {exc}",
                    kind=ErrorKind.PUBLISH_CONFLICT,
                ) from exc
    raise AssertionError("unreachable")


def execute_plan(
    plan: SyncPlan,
    target: FormatClient,
    store: StateStore,
    events: EventLog,
    state: Optional[SyncState] = None,
    report: Optional[SyncReport] = None,
) -> SyncReport:
    """
    Apply *plan* to *target*, recording per-commit outcomes.

    Raises:
        XTableError(PUBLISH_CONFLICT): a commit lost two publish races
        XTableError(STATE_IO_FAILURE): a commit was published but state could not be saved
    """
    source_name = store.source_format.value
    target_name = store.target_format.value
    if report is None:
        report = SyncReport(events.table, str(store.base), store.source_format, store.target_format)
    report.mode, report.reason = plan.mode, plan.reason
    report.events = events.events

    if plan.reason is PlanReason.EMPTY:
        return report
    state = state or store.fresh()

    if plan.mode is PlanMode.FULL_SNAPSHOT:
        desired = plan.snapshot
        tag = desired.source_commit.tag()
        with events.phase(Phase.TRANSLATE, source_name, target_name):
            if not target.exists():
                target.init(empty_snapshot_like(desired))
            tags = target.source_tag_index()
            change = None
            if tag not in tags:
                current = target.read_snapshot()
                change = diff_filesets(
                    current.live_files,
                    desired.live_files,
                    source_commit=desired.source_commit,
                    timestamp_ms=desired.timestamp_ms,
                    schema=desired.schema,
                )
                if change.is_empty and desired.schema.same_fields(current.schema):
                    tags[tag] = target.latest_token()
                    change = None
        if change is None:
            report.results.append(CommitResult(desired.source_commit.token, CommitOutcome.SKIPPED_ALREADY_PRESENT, tags[tag]))
            target_token = tags[tag]
        else:
            with events.phase(Phase.PUBLISH, source_name, target_name) as counters:
                outcome, target_token = _publish(target, change, tag, tags)
                counters["commits_translated"] = int(outcome is CommitOutcome.TRANSLATED)
                counters["note"] = tag
            report.results.append(CommitResult(desired.source_commit.token, outcome, target_token))
        state.record(desired.source_commit.token, target_token, desired.schema)
        with events.phase(Phase.STATE_SAVE, source_name, target_name):
            store.save(state)
        return report

    with events.phase(Phase.TRANSLATE, source_name, target_name):
        if plan.init_snapshot is not None and not target.exists():
            target.init(empty_snapshot_like(plan.init_snapshot))
            init_commit = plan.init_snapshot.source_commit
            if init_commit is not None:
                state.record(init_commit.token, target.earliest_token(), plan.init_snapshot.schema)
        tags = target.source_tag_index()

    for change in plan.backlog:
        tag = change.source_commit.tag()
        if tag in tags:
            outcome, target_token = CommitOutcome.SKIPPED_ALREADY_PRESENT, tags[tag]
        else:
            with events.phase(Phase.PUBLISH, source_name, target_name) as counters:
                outcome, target_token = _publish(target, change, tag, tags)
                counters["commits_translated"] = int(outcome is CommitOutcome.TRANSLATED)
                counters["note"] = tag
            tags[tag] = target_token
        report.results.append(CommitResult(change.source_commit.token, outcome, target_token))
        state.record(change.source_commit.token, target_token, change.schema)
        with events.phase(Phase.STATE_SAVE, source_name, target_name):
            store.save(state)
    return report


def sync_table(
    storage: Storage,
    source: FormatClient,
    target: FormatClient,
    *,
    table_name: Optional[str] = None,
    mode_override: Optional[PlanMode] = None,
    events: Optional[EventLog] = None,
) -> SyncReport:
    """Plan and execute one (table, target) pair; errors land in the report."""
    base = source.base
    table = table_name or base.name
    events = events or EventLog(storage, base, table)
    store = StateStore(storage, base, source.format, target.format)
    report = SyncReport(table, str(base), source.format, target.format, events=events.events)
    try:
        with events.phase(Phase.PLAN, source.format.value, target.format.value) as counters:
            state = store.load()
            plan = plan_sync(source, target, state, mode_override)
            counters["note"] = f"{plan.mode.value}/{plan.reason.value}/{plan.work_items}"
        if table_name:
            if plan.snapshot is not None:
                plan.snapshot = replace(plan.snapshot, table_name=table_name)
            if plan.init_snapshot is not None:
                plan.init_snapshot = replace(plan.init_snapshot, table_name=table_name)
        execute_plan(plan, target, store, events, state, report)
    except XTableError as exc:
        report.error = redact_secrets(str(exc))
        report.error_kind = exc.kind
        logger.error(f"❌ sync {table} {source.format.value}->{target.format.value} failed: {report.error}")
    return report


def _sync_dataset(
    sync_config: SyncConfig,
    dataset: DatasetConfig,
    storage: Storage,
    mode_override: Optional[PlanMode],
) -> list[SyncReport]:
    base = dataset.table_base_path
    source_name = sync_config.source_format.value
    events = EventLog(storage, base, dataset.table_name or base.name)
    try:
        with events.phase(Phase.DETECT, source_name) as counters:
            found = detect_format(storage, base)
            counters["note"] = ",".join(sorted(f.value for f in found))
        if sync_config.source_format not in found:
            raise XTableError(f"no {source_name} table at {base}", kind=ErrorKind.NO_TABLE)
        source = get_format_client(sync_config.source_format, storage, base)
    except XTableError as exc:
        message = redact_secrets(str(exc))
        logger.error(f"❌ {redact_secrets(str(base))}: {message}")
        return [
            SyncReport(dataset.table_name or base.name, str(base), sync_config.source_format, target,
                       events=events.events, error=message, error_kind=exc.kind)
            for target in sync_config.target_formats
        ]

    reports = []
    for target_format in sync_config.target_formats:
        target = get_format_client(target_format, storage, base)
        reports.append(sync_table(
            storage, source, target, table_name=dataset.table_name or None,
            mode_override=mode_override, events=events,
        ))
    return reports


def run_sync(
    sync_config: SyncConfig,
    mode_override: Optional[PlanMode] = None,
    *,
    storage: Optional[Storage] = None,
    stop_event: Optional[threading.Event] = None,
    max_workers: Optional[int] = None,
) -> list[SyncReport]:
    """
    Sync every dataset to every target; reports come back dataset-major.

    A set *stop_event* stops before the next dataset starts.

    Raises:
        XTableError(CONFIG_INVALID): the config itself is malformed
    """
    sync_config.validate()
    storage = storage or LocalStorage()
    workers = max_workers or config.MAX_WORKERS

    def work(dataset: DatasetConfig) -> list[SyncReport]:
        if stop_event is not None and stop_event.is_set():
            return []
        return _sync_dataset(sync_config, dataset, storage, mode_override)

    if workers > 1 and len(sync_config.datasets) > 1:
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="xtable-sync") as pool:
            per_dataset = list(pool.map(work, sync_config.datasets))
    else:
        per_dataset = [work(dataset) for dataset in sync_config.datasets]
    return [report for reports in per_dataset for report in reports]
