"""
Tests for per-phase telemetry events.
Run: pytest test_telemetry.py -v
"""
import logging

import pytest

from conformance_harness import apply_workload, sales_workload
from errors import ErrorKind, XTableError
from internal_model import TableFormat
from storage import parse_uri
from sync_core import DatasetConfig, SyncConfig, run_sync
from telemetry import EventLog, Phase, read_events


@pytest.fixture
def synced(storage, table_base):
    """Delta sales table synced to Iceberg and Hudi; returns (reports, files created)."""
    apply_workload(TableFormat.DELTA, storage, table_base, sales_workload(), seed=1)
    before = storage.stats.metadata_files_created(table_base)
    reports = run_sync(
        SyncConfig(TableFormat.DELTA, (TableFormat.ICEBERG, TableFormat.HUDI), (DatasetConfig(table_base),)),
        storage=storage,
    )
    return reports, storage.stats.metadata_files_created(table_base) - before


class TestSyncEvents:
    """Events written by a sync run."""

    def test_every_phase_reported(self, synced, storage, table_base):
        phases = {e["phase"] for e in read_events(storage, table_base)}
        assert phases == {p.value for p in Phase}

    def test_event_fields(self, synced, storage, table_base):
        event = read_events(storage, table_base)[0]
        assert event["phase"] == "DETECT"
        assert event["table"] == "table"
        assert event["source_format"] == "DELTA"
        for key in ("timestamp_ms", "duration_ms", "commits_translated", "metadata_files_written",
                    "metadata_bytes_read", "data_bytes_read", "note"):
            assert key in event

    def test_commit_counts_add_up(self, synced, storage, table_base):
        reports, _ = synced
        events = read_events(storage, table_base)
        assert sum(e["commits_translated"] for e in events) == sum(r.commits_translated for r in reports) == 2

    def test_files_written_add_up(self, synced, storage, table_base):
        _, created = synced
        assert sum(e["metadata_files_written"] for e in read_events(storage, table_base)) == created

    def test_no_data_bytes_read(self, synced, storage, table_base):
        assert all(e["data_bytes_read"] == 0 for e in read_events(storage, table_base))

    def test_read_back_through_storage(self, synced, storage, table_base):
        state_dir = table_base.join("_xtable")
        before = storage.stats.reads_under(state_dir).opens
        assert read_events(storage, table_base)
        assert storage.stats.reads_under(state_dir).opens == before + 1

    def test_events_kept_on_report(self, synced):
        reports, _ = synced
        assert [e.phase for e in reports[0].events][:2] == ["DETECT", "PLAN"]


class TestEventLog:
    """Phase measurement."""

    def test_data_read_is_a_violation(self, storage, table_base):
        storage.stats.register_data_root(table_base)
        data = table_base.join("s_type=a", "f.data")
        storage.put_if_absent(data, b"1,a\n")
        events = EventLog(storage, table_base, "sales", mirror=False)
        with pytest.raises(XTableError) as exc_info:
            with events.phase(Phase.PLAN, "DELTA", "ICEBERG"):
                storage.read_file(data)
        assert exc_info.value.kind is ErrorKind.DATA_READ_VIOLATION
        assert events.events[0].data_bytes_read == 4

    def test_body_error_still_emits(self, storage, table_base):
        events = EventLog(storage, table_base, "sales", mirror=False)
        with pytest.raises(RuntimeError):
            with events.phase(Phase.PUBLISH, "DELTA", "HUDI"):
                raise RuntimeError("boom")
        assert [e.phase for e in events.events] == ["PUBLISH"]

    def test_counters_from_body(self, storage, table_base):
        events = EventLog(storage, table_base, "sales", mirror=False)
        with events.phase(Phase.PUBLISH, "DELTA", "HUDI") as counters:
            counters["commits_translated"] = 1
            counters["note"] = "DELTA:4"
        assert (events.events[0].commits_translated, events.events[0].note) == (1, "DELTA:4")

    def test_mirror_to_logging(self, storage, table_base, caplog):
        events = EventLog(storage, table_base, "sales", mirror=True)
        with caplog.at_level(logging.INFO, logger="telemetry"):
            with events.phase(Phase.DETECT, "HUDI"):
                pass
        assert "sales HUDI->- DETECT" in caplog.text

    def test_no_file_without_table_directory(self, storage, table_base):
        events = EventLog(storage, table_base, "sales", mirror=False)
        with events.phase(Phase.DETECT, "HUDI"):
            pass
        assert read_events(storage, table_base) == []
        assert len(events.events) == 1

    def test_remote_base_keeps_events_in_memory(self, storage):
        events = EventLog(storage, parse_uri("s3://bucket/sales"), "sales", mirror=False)
        with events.phase(Phase.DETECT, "HUDI"):
            pass
        assert [e.phase for e in events.events] == ["DETECT"]
