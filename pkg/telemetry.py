"""
Sync telemetry: one JSON object per phase appended to
``<base>/_xtable/events.jsonl`` and optionally mirrored to stderr logging.

Each event carries the storage counters observed during its phase, scoped
to the table's base path. Phases never overlap, so per-event
metadata_files_written values sum to the files a run created.

The events file is appended by a logging FileHandler, so it exists only for
local (``file``) bases and its writes are not counted in StorageStats; other
bases keep their events on the SyncReport only. read_events reads it back
through Storage.
"""
from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional

from pythonjsonlogger import jsonlogger

import config
from errors import ErrorKind, XTableError
from storage import Storage, StoragePath
from utils import now_ms, redact_secrets

logger = logging.getLogger(__name__)

EVENTS_FILE = "events.jsonl"
EVENTS_LOGGER = "xtable.events"

_handler_lock = threading.Lock()


class Phase(str, Enum):
    DETECT = "DETECT"
    PLAN = "PLAN"
    TRANSLATE = "TRANSLATE"
    PUBLISH = "PUBLISH"
    STATE_SAVE = "STATE_SAVE"


@dataclass
class TelemetryEvent:
    timestamp_ms: int
    table: str
    source_format: str
    target_format: str
    phase: str
    duration_ms: int
    commits_translated: int = 0
    metadata_files_written: int = 0
    metadata_bytes_read: int = 0
    data_bytes_read: int = 0
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _sorted_dumps(obj, **kwargs) -> str:
    kwargs["sort_keys"] = True
    return json.dumps(obj, **kwargs)


def events_path(base: StoragePath) -> StoragePath:
    return base.join(config.XTABLE_STATE_DIR, EVENTS_FILE)


def _events_logger(base: StoragePath) -> Optional[logging.Logger]:
    """Per-table logger writing JSON lines to the table's events file."""
    if base.scheme != "file" or not Path(base.path).is_dir():
        return None
    digest = hashlib.sha1(str(base).encode("utf-8")).hexdigest()[:12]
    events_logger = logging.getLogger(f"{EVENTS_LOGGER}.{digest}")
    with _handler_lock:
        if not events_logger.handlers:
            path = Path(events_path(base).path)
            path.parent.mkdir(parents=True, exist_ok=True)
            handler = logging.FileHandler(path, encoding="utf-8")
            handler.setFormatter(jsonlogger.JsonFormatter("%(message)s", json_serializer=_sorted_dumps))
            events_logger.addHandler(handler)
            events_logger.setLevel(logging.INFO)
            events_logger.propagate = False
    return events_logger


def close_event_logs() -> None:
    """Release every events file handle (tests remove tables between runs)."""
    with _handler_lock:
        for name, candidate in list(logging.Logger.manager.loggerDict.items()):
            if name.startswith(EVENTS_LOGGER + ".") and isinstance(candidate, logging.Logger):
                for handler in list(candidate.handlers):
                    candidate.removeHandler(handler)
                    handler.close()


def read_events(storage: Storage, base: StoragePath) -> list[dict]:
    """Parse a table's events file through *storage*; missing file -> []."""
    path = events_path(base)
    if not storage.exists(path):
        return []
    text = storage.read_file(path).decode("utf-8")
    return [json.loads(line) for line in text.splitlines() if line.strip()]


class EventLog:
    """Collects and persists telemetry for one table."""

    def __init__(self, storage: Storage, base: StoragePath, table: str, mirror: Optional[bool] = None):
        self.storage = storage
        self.base = base
        self.table = table
        self.mirror = config.EVENTS_MIRROR if mirror is None else mirror
        self.events: list[TelemetryEvent] = []
        self._logger: Optional[logging.Logger] = None

    @contextmanager
    def phase(self, phase: Phase, source_format: str, target_format: str = "") -> Iterator[dict]:
        """
        Measure one phase. The body may set ``counters["commits_translated"]``
        and ``counters["note"]``.

        Raises:
            XTableError(DATA_READ_VIOLATION): a data file was read during the phase
        """
        before = self.storage.stats.totals(self.base)
        started = time.monotonic()
        counters = {"commits_translated": 0, "note": ""}
        try:
            yield counters
        finally:
            after = self.storage.stats.totals(self.base)
            event = TelemetryEvent(
                timestamp_ms=now_ms(),
                table=self.table,
                source_format=source_format,
                target_format=target_format,
                phase=phase.value,
                duration_ms=int((time.monotonic() - started) * 1000),
                commits_translated=counters["commits_translated"],
                metadata_files_written=after["metadata_files_written"] - before["metadata_files_written"],
                metadata_bytes_read=after["metadata_bytes_read"] - before["metadata_bytes_read"],
                data_bytes_read=after["data_bytes_read"] - before["data_bytes_read"],
                note=counters["note"],
            )
            self.emit(event)
        if event.data_bytes_read or after["data_opens"] != before["data_opens"]:
            raise XTableError(
                f"{phase.value} read {event.data_bytes_read} data bytes under {redact_secrets(str(self.base))}",
                kind=ErrorKind.DATA_READ_VIOLATION,
            )

    def emit(self, event: TelemetryEvent) -> None:
        self.events.append(event)
        if self._logger is None:
            self._logger = _events_logger(self.base)
        if self._logger is not None:
            self._logger.info("telemetry", extra=event.to_dict())
        if self.mirror:
            logger.info(
                f"📊 {event.table} {event.source_format}->{event.target_format or '-'} {event.phase} "
                f"{event.duration_ms}ms commits={event.commits_translated} "
                f"files={event.metadata_files_written} meta_bytes={event.metadata_bytes_read}"
            )
