"""
Reader/writer tests for the three table formats.
Run: pytest test_formats.py -v
"""
import json
import os

import pytest

from config import make_rng
from conftest import sales_file
from errors import ErrorKind, XTableError
from format_base import (
    HIVE_NULL_PARTITION,
    get_format_client,
    hive_partition_path,
    parse_hive_partition_path,
)
from format_delta import (
    delta_init,
    delta_read_changes_since,
    delta_read_snapshot,
    delta_read_source_tags,
    delta_write_change,
)
from format_hudi import (
    CREATE_TOKEN,
    REPLACE_PREV_COMMITS,
    FileSlice,
    base_file_name,
    format_instant,
    hudi_init,
    hudi_read_changes_since,
    hudi_read_snapshot,
    hudi_read_source_tags,
    hudi_write_change,
    next_instant_after,
    pair_slices,
    parse_instant,
)
from format_iceberg import (
    iceberg_init,
    iceberg_read_changes_since,
    iceberg_read_snapshot,
    iceberg_read_source_tags,
    iceberg_write_change,
)
from internal_model import (
    NULL_TOKEN,
    ColumnStat,
    FieldType,
    InternalDataFile,
    InternalSchema,
    Operation,
    TableChange,
    TableFormat,
)
from storage import parse_uri
from utils import canonical_json_bytes

T0 = 1704110400000
ALL_FORMATS = list(TableFormat)


def _client(fmt, storage, base, seed=11):
    return get_format_client(fmt, storage, base, make_rng(seed))


def _created(fmt, storage, base, empty_sales):
    client = _client(fmt, storage, base)
    client.init(empty_sales)
    return client


def _lifecycle(client):
    """Three commits: add a, add b, rewrite b. Returns (tokens, files)."""
    f1, f2, f3 = sales_file("f1", "a"), sales_file("f2", "b"), sales_file("f3", "b", records=2)
    tokens = [
        client.write_change(TableChange(None, T0 + 1000, files_added=[f1])),
        client.write_change(TableChange(None, T0 + 2000, files_added=[f2])),
        client.write_change(TableChange(
            None, T0 + 3000, files_added=[f3], files_removed=[f2.rel_path], operation=Operation.OVERWRITE,
        )),
    ]
    return tokens, (f1, f2, f3)


class TestPartitionPaths:
    """Hive-style partition directories."""

    def test_render_and_parse(self):
        assert hive_partition_path(["s_type"], {"s_type": "a"}) == "s_type=a"
        assert parse_hive_partition_path("s_type=a", ["s_type"]) == {"s_type": "a"}

    def test_null_partition_directory(self):
        path = hive_partition_path(["s_type"], {"s_type": NULL_TOKEN})
        assert path == f"s_type={HIVE_NULL_PARTITION}"
        assert parse_hive_partition_path(path, ["s_type"]) == {"s_type": NULL_TOKEN}

    @pytest.mark.parametrize("value,directory", [
        ("x/y", "s_type=x%2Fy"),
        ("a=b", "s_type=a%3Db"),
        ("50%", "s_type=50%25"),
        (HIVE_NULL_PARTITION, "s_type=%5F_HIVE_DEFAULT_PARTITION__"),
        ("plain value", "s_type=plain value"),
    ])
    def test_special_characters_escaped(self, value, directory):
        assert hive_partition_path(["s_type"], {"s_type": value}) == directory
        assert parse_hive_partition_path(directory, ["s_type"]) == {"s_type": value}

    def test_bare_segments_match_by_position(self):
        assert parse_hive_partition_path("a/2024", ["kind", "year"]) == {"kind": "a", "year": "2024"}

    def test_unpartitioned(self):
        assert hive_partition_path([], {}) == ""
        assert parse_hive_partition_path("", []) == {}


@pytest.mark.parametrize("fmt", ALL_FORMATS, ids=lambda f: f.value)
class TestFormatContract:
    """Behaviour every format client shares."""

    def test_init_creates_empty_table(self, fmt, storage, table_base, empty_sales):
        client = _client(fmt, storage, table_base)
        assert not client.exists()
        client.init(empty_sales)
        assert client.exists()

        snapshot = _client(fmt, storage, table_base).read_snapshot()
        assert snapshot.live_files == frozenset()
        assert snapshot.schema == empty_sales.schema
        assert snapshot.partition_columns == ["s_type"]
        assert snapshot.table_name == "sales"
        assert snapshot.source_commit.token == client.earliest_token()
        assert client.commit_count() == 0

    def test_init_twice_refused(self, fmt, storage, table_base, empty_sales):
        _created(fmt, storage, table_base, empty_sales)
        with pytest.raises(XTableError) as exc_info:
            _client(fmt, storage, table_base).init(empty_sales)
        assert exc_info.value.kind is ErrorKind.TABLE_EXISTS

    def test_init_with_files_refused(self, fmt, storage, table_base, empty_sales):
        with pytest.raises(XTableError) as exc_info:
            _client(fmt, storage, table_base).init(empty_sales.with_live_files([sales_file("a", "a")]))
        assert exc_info.value.kind is ErrorKind.INVALID_CHANGE

    def test_lifecycle_and_time_travel(self, fmt, storage, table_base, empty_sales):
        client = _created(fmt, storage, table_base, empty_sales)
        tokens, (f1, f2, f3) = _lifecycle(client)

        reader = _client(fmt, storage, table_base)
        assert reader.latest_token() == tokens[-1]
        assert reader.read_snapshot().live_files == frozenset({f1, f3})
        assert reader.read_snapshot(tokens[0]).live_files == frozenset({f1})
        assert reader.read_snapshot(tokens[1]).live_files == frozenset({f1, f2})
        assert reader.read_snapshot(reader.earliest_token()).live_files == frozenset()
        assert reader.commit_count() == 3
        assert [r.token for r in reader.commit_history()] == [reader.earliest_token()] + tokens

    def test_tokens_increase(self, fmt, storage, table_base, empty_sales):
        client = _created(fmt, storage, table_base, empty_sales)
        tokens, _ = _lifecycle(client)
        ids = [client.commit_id(t) for t in [client.earliest_token()] + tokens]
        assert ids == sorted(ids)

    def test_changes_since(self, fmt, storage, table_base, empty_sales):
        client = _created(fmt, storage, table_base, empty_sales)
        tokens, (f1, f2, f3) = _lifecycle(client)
        reader = _client(fmt, storage, table_base)

        changes = reader.read_changes_since(reader.earliest_token())
        assert [c.source_commit.token for c in changes] == tokens
        assert changes[0].files_added == frozenset({f1})
        assert changes[2].files_added == frozenset({f3})
        assert changes[2].files_removed == frozenset({f2.rel_path})
        assert changes[2].operation is Operation.OVERWRITE
        if fmt is not TableFormat.HUDI:
            # hudi commit time is its allocated instant
            assert [c.timestamp_ms for c in changes[:2]] == [T0 + 1000, T0 + 2000]

        assert len(reader.read_changes_since(tokens[0])) == 2
        assert reader.read_changes_since(tokens[-1]) == []

    def test_source_tags(self, fmt, storage, table_base, empty_sales):
        client = _created(fmt, storage, table_base, empty_sales)
        token = client.write_change(TableChange(None, T0 + 1000, files_added=[sales_file("a", "a")]), "DELTA:1")
        client.write_change(TableChange(None, T0 + 2000, files_added=[sales_file("b", "b")]))
        reader = _client(fmt, storage, table_base)
        assert reader.read_source_tags() == {token: "DELTA:1"}
        assert reader.source_tag_index() == {"DELTA:1": token}
        assert reader.commit_history()[1].source_tag == "DELTA:1"

    def test_remove_of_unknown_file_refused(self, fmt, storage, table_base, empty_sales):
        client = _created(fmt, storage, table_base, empty_sales)
        with pytest.raises(XTableError) as exc_info:
            client.write_change(TableChange(None, T0, files_removed=["s_type=a/ghost.data"]))
        expected = ErrorKind.UNPAIRABLE_REMOVE if fmt is TableFormat.HUDI else ErrorKind.INVALID_CHANGE
        assert exc_info.value.kind is expected

    def test_metadata_paths_refused_as_data(self, fmt, storage, table_base, empty_sales):
        client = _created(fmt, storage, table_base, empty_sales)
        bad = InternalDataFile("_xtable/x.data", {"s_type": "a"}, 1, 1)
        with pytest.raises(XTableError) as exc_info:
            client.write_change(TableChange(None, T0, files_added=[bad]))
        assert exc_info.value.kind is ErrorKind.INVALID_CHANGE

    def test_schema_evolution(self, fmt, storage, table_base, empty_sales, sales_schema):
        client = _created(fmt, storage, table_base, empty_sales)
        evolved = sales_schema.add_field("amount", FieldType.FLOAT64)
        client.write_change(TableChange(None, T0 + 1000, files_added=[sales_file("a", "a")]))
        client.write_change(TableChange(None, T0 + 2000, schema=evolved, operation=Operation.SCHEMA_CHANGE))

        reader = _client(fmt, storage, table_base)
        assert reader.read_snapshot().schema == evolved
        assert reader.read_snapshot(reader.read_changes_since(None)[0].source_commit.token).schema == sales_schema
        assert reader.read_changes_since(None)[-1].schema == evolved

    def test_dropping_a_column_refused(self, fmt, storage, table_base, empty_sales, sales_schema):
        client = _created(fmt, storage, table_base, empty_sales)
        narrowed = InternalSchema(1, sales_schema.fields[:1])
        with pytest.raises(XTableError) as exc_info:
            client.write_change(TableChange(None, T0, schema=narrowed, operation=Operation.SCHEMA_CHANGE))
        assert exc_info.value.kind is ErrorKind.INVALID_CHANGE

    def test_lost_race_is_concurrent_commit(self, fmt, storage, table_base, empty_sales):
        client = _created(fmt, storage, table_base, empty_sales)
        path = client.metadata_path.join("race-marker.json")
        client._publish(path, b"{}")
        with pytest.raises(XTableError) as exc_info:
            client._publish(path, b"{}")
        assert exc_info.value.kind is ErrorKind.CONCURRENT_COMMIT

    def test_missing_table(self, fmt, storage, table_base):
        with pytest.raises(XTableError) as exc_info:
            _client(fmt, storage, table_base).read_snapshot()
        assert exc_info.value.kind is ErrorKind.NO_TABLE

    def test_metadata_documents_read_once_per_client(self, fmt, storage, table_base, empty_sales):
        client = _created(fmt, storage, table_base, empty_sales)
        _lifecycle(client)
        reader = _client(fmt, storage, table_base)
        reader.read_snapshot()
        metadata = reader.metadata_path
        before = storage.stats.reads_under(metadata).opens
        reader.read_snapshot()
        after = storage.stats.reads_under(metadata).opens
        # only the mutable root pointer may be re-read
        assert after - before <= 1


@pytest.mark.parametrize("fmt", [TableFormat.DELTA, TableFormat.ICEBERG], ids=lambda f: f.value)
class TestColumnStats:
    """Formats with per-file column bounds keep them."""

    def test_stats_round_trip(self, fmt, storage, table_base, empty_sales):
        client = _created(fmt, storage, table_base, empty_sales)
        stats = (ColumnStat(1, "1", "9", 0), ColumnStat(2, "a", "a", 0))
        f = sales_file("a", "a", records=3, stats=stats)
        client.write_change(TableChange(None, T0, files_added=[f]))
        (read_back,) = _client(fmt, storage, table_base).read_snapshot().live_files
        assert read_back.column_stats == stats
        assert read_back == f


class TestDeltaLog:
    """Delta-style log specifics."""

    def _table(self, storage, table_base, empty_sales):
        client = _created(TableFormat.DELTA, storage, table_base, empty_sales)
        _lifecycle(client)
        return client

    def test_version_file_names(self, storage, table_base, empty_sales):
        self._table(storage, table_base, empty_sales)
        names = storage.list_dir(table_base.join("_delta_log"))
        assert names == [f"{v:020d}.json" for v in range(4)]

    def test_gap_in_log(self, storage, table_base, empty_sales):
        self._table(storage, table_base, empty_sales)
        os.remove(table_base.join("_delta_log", f"{1:020d}.json").path)
        with pytest.raises(XTableError) as exc_info:
            _client(TableFormat.DELTA, storage, table_base).read_snapshot()
        assert exc_info.value.kind is ErrorKind.GAP_IN_LOG

    def test_malformed_action(self, storage, table_base, empty_sales):
        _created(TableFormat.DELTA, storage, table_base, empty_sales)
        storage.put_if_absent(table_base.join("_delta_log", f"{1:020d}.json"), b'{"add": {"size": 1}}\n')
        with pytest.raises(XTableError) as exc_info:
            _client(TableFormat.DELTA, storage, table_base).read_snapshot()
        assert exc_info.value.kind is ErrorKind.MALFORMED_ACTION

    def test_invalid_utf8_is_malformed(self, storage, table_base, empty_sales):
        _created(TableFormat.DELTA, storage, table_base, empty_sales)
        payload = b'{"commitInfo": {"operation": "\xff"}}\n'
        storage.put_if_absent(table_base.join("_delta_log", f"{1:020d}.json"), payload)
        with pytest.raises(XTableError) as exc_info:
            _client(TableFormat.DELTA, storage, table_base).read_snapshot()
        assert exc_info.value.kind is ErrorKind.MALFORMED_ACTION

    def test_unmodeled_actions_skipped(self, storage, table_base, empty_sales):
        _created(TableFormat.DELTA, storage, table_base, empty_sales)
        lines = [
            {"commitInfo": {"timestamp": T0 + 5, "operation": "WRITE"}},
            {"protocol": {"minReaderVersion": 1, "minWriterVersion": 2}},
            {"add": {"path": "s_type=a/x.data", "partitionValues": {"s_type": "a"}, "size": 10,
                     "stats": '{"numRecords":4}'}},
        ]
        payload = b"\n".join(canonical_json_bytes(line) for line in lines) + b"\n"
        storage.put_if_absent(table_base.join("_delta_log", f"{1:020d}.json"), payload)
        (f,) = _client(TableFormat.DELTA, storage, table_base).read_snapshot().live_files
        assert (f.rel_path, f.record_count, f.file_size_bytes) == ("s_type=a/x.data", 4, 10)

    def test_version_ahead(self, storage, table_base, empty_sales):
        self._table(storage, table_base, empty_sales)
        reader = _client(TableFormat.DELTA, storage, table_base)
        for call in (lambda: reader.read_changes_since("9"), lambda: reader.read_snapshot("9")):
            with pytest.raises(XTableError) as exc_info:
                call()
            assert exc_info.value.kind is ErrorKind.VERSION_AHEAD

    def test_null_partition_value(self, storage, table_base, empty_sales):
        client = _created(TableFormat.DELTA, storage, table_base, empty_sales)
        f = InternalDataFile(f"s_type={HIVE_NULL_PARTITION}/n.data", {"s_type": None}, 1, 10)
        client.write_change(TableChange(None, T0, files_added=[f]))
        (read_back,) = _client(TableFormat.DELTA, storage, table_base).read_snapshot().live_files
        assert read_back.partitions == {"s_type": NULL_TOKEN}


class TestIcebergMetadata:
    """Iceberg-style root pointer specifics."""

    def _hint(self, table_base):
        return table_base.join("metadata", "version-hint.text")

    def test_hint_tracks_latest_version(self, storage, table_base, empty_sales):
        client = _created(TableFormat.ICEBERG, storage, table_base, empty_sales)
        _lifecycle(client)
        assert storage.read_file(self._hint(table_base)) == b"4"
        assert storage.exists(table_base.join("metadata", "v4.metadata.json"))

    def test_stale_hint_is_probed_forward(self, storage, table_base, empty_sales):
        client = _created(TableFormat.ICEBERG, storage, table_base, empty_sales)
        _, (f1, _, f3) = _lifecycle(client)
        storage.write_replace_atomic(self._hint(table_base), b"2")
        reader = _client(TableFormat.ICEBERG, storage, table_base)
        assert reader.current_version() == 4
        assert reader.read_snapshot().live_files == frozenset({f1, f3})

    def test_dangling_hint(self, storage, table_base, empty_sales):
        _created(TableFormat.ICEBERG, storage, table_base, empty_sales)
        storage.write_replace_atomic(self._hint(table_base), b"9")
        with pytest.raises(XTableError) as exc_info:
            _client(TableFormat.ICEBERG, storage, table_base).read_snapshot()
        assert exc_info.value.kind is ErrorKind.DANGLING_POINTER

    def test_garbage_hint(self, storage, table_base, empty_sales):
        _created(TableFormat.ICEBERG, storage, table_base, empty_sales)
        storage.write_replace_atomic(self._hint(table_base), b"v1")
        with pytest.raises(XTableError) as exc_info:
            _client(TableFormat.ICEBERG, storage, table_base).read_snapshot()
        assert exc_info.value.kind is ErrorKind.MALFORMED_METADATA

    def test_interrupted_init_is_completed(self, storage, table_base, empty_sales):
        _created(TableFormat.ICEBERG, storage, table_base, empty_sales)
        os.remove(self._hint(table_base).path)
        client = _client(TableFormat.ICEBERG, storage, table_base)
        assert not client.exists()
        client.init(empty_sales)
        assert client.read_snapshot().table_name == "sales"

    def test_expired_snapshot(self, storage, table_base, empty_sales):
        client = _created(TableFormat.ICEBERG, storage, table_base, empty_sales)
        _lifecycle(client)
        doc = json.loads(storage.read_file(table_base.join("metadata", "v4.metadata.json")))
        doc["snapshots"] = doc["snapshots"][1:]
        storage.put_if_absent(table_base.join("metadata", "v5.metadata.json"), canonical_json_bytes(doc))
        storage.write_replace_atomic(self._hint(table_base), b"5")

        reader = _client(TableFormat.ICEBERG, storage, table_base)
        assert len(reader.read_snapshot().live_files) == 2
        for call in (lambda: reader.read_snapshot("1"), lambda: reader.read_changes_since("1")):
            with pytest.raises(XTableError) as exc_info:
                call()
            assert exc_info.value.kind is ErrorKind.SNAPSHOT_EXPIRED

    def test_snapshot_ids_seeded(self, storage, tmp_path, empty_sales):
        ids = []
        for name in ("one", "two"):
            base = parse_uri(str(tmp_path / name))
            client = _created(TableFormat.ICEBERG, storage, base, empty_sales)
            client.write_change(TableChange(None, T0, files_added=[sales_file("a", "a")]))
            ids.append(client.read_metadata()[1]["current-snapshot-id"])
        assert ids[0] == ids[1]


class TestHudiTimeline:
    """Hudi-style timeline specifics."""

    def test_instant_encoding(self):
        assert format_instant(T0 + 123) == "20240101120000123"
        assert parse_instant("20240101120000123") == T0 + 123
        assert next_instant_after("20240101120000999") == "20240101120001000"
        assert parse_instant(CREATE_TOKEN) == 0

    def test_instants_follow_commit_time(self, storage, table_base, empty_sales):
        client = _created(TableFormat.HUDI, storage, table_base, empty_sales)
        tokens, _ = _lifecycle(client)
        assert tokens == [format_instant(T0 + 1000), format_instant(T0 + 1001), format_instant(T0 + 1002)]
        assert client.earliest_token() == CREATE_TOKEN

    def test_rewrite_is_a_commit_and_pure_delete_a_replace(self, storage, table_base, empty_sales):
        client = _created(TableFormat.HUDI, storage, table_base, empty_sales)
        _, (f1, _, f3) = _lifecycle(client)
        assert client.timeline()[-1][1] == "commit"

        client.write_change(TableChange(None, T0 + 4000, files_removed=[f1.rel_path], operation=Operation.DELETE))
        reader = _client(TableFormat.HUDI, storage, table_base)
        assert reader.timeline()[-1][1] == "replacecommit"
        assert reader.read_snapshot().live_files == frozenset({f3})
        assert reader.read_changes_since(reader.timeline()[-2][0])[0].files_removed == frozenset({f1.rel_path})

    def test_replacecommit_records_retired_slice(self, storage, table_base, empty_sales, sales_schema):
        client = _created(TableFormat.HUDI, storage, table_base, empty_sales)
        files = [sales_file(f"f{i}", "a") for i in range(30)]
        tokens = [client.write_change(TableChange(None, T0 + i, files_added=[f])) for i, f in enumerate(files)]
        client.write_change(TableChange(None, T0 + 100, files_removed=[files[0].rel_path], operation=Operation.DELETE))

        meta = client.instant_metadata(*client.timeline()[-1])
        (file_id,) = meta["partitionToReplaceFileIds"]["s_type=a"]
        assert meta[REPLACE_PREV_COMMITS] == {"s_type=a": {file_id: tokens[0]}}

        reader = _client(TableFormat.HUDI, storage, table_base)
        hoodie = table_base.join(".hoodie")
        before = storage.stats.reads_under(hoodie).opens
        (change,) = reader.read_changes_since(tokens[-1], sales_schema)
        assert change.files_removed == frozenset({files[0].rel_path})
        assert storage.stats.reads_under(hoodie).opens - before <= 3

    def test_instant_not_on_timeline(self, storage, table_base, empty_sales):
        client = _created(TableFormat.HUDI, storage, table_base, empty_sales)
        tokens, _ = _lifecycle(client)
        with pytest.raises(XTableError) as exc_info:
            client.read_changes_since("20230101000000000")
        assert exc_info.value.kind is ErrorKind.INSTANT_NOT_FOUND
        with pytest.raises(XTableError) as exc_info:
            client.read_changes_since("20990101000000000")
        assert exc_info.value.kind is ErrorKind.VERSION_AHEAD

    def test_malformed_timeline(self, storage, table_base, empty_sales):
        _created(TableFormat.HUDI, storage, table_base, empty_sales)
        storage.put_if_absent(table_base.join(".hoodie", "garbage.commit"), b"{}")
        with pytest.raises(XTableError) as exc_info:
            _client(TableFormat.HUDI, storage, table_base).read_snapshot()
        assert exc_info.value.kind is ErrorKind.MALFORMED_TIMELINE

    def test_invalid_utf8_properties(self, storage, table_base):
        storage.put_if_absent(table_base.join(".hoodie", "hoodie.properties"), b"hoodie.table.name=\xff\n")
        with pytest.raises(XTableError) as exc_info:
            _client(TableFormat.HUDI, storage, table_base).properties()
        assert exc_info.value.kind is ErrorKind.MALFORMED_TIMELINE

    def test_stats_are_not_carried(self, storage, table_base, empty_sales):
        client = _created(TableFormat.HUDI, storage, table_base, empty_sales)
        f = sales_file("a", "a", stats=(ColumnStat(1, "1", "1", 0),))
        client.write_change(TableChange(None, T0, files_added=[f]))
        (read_back,) = _client(TableFormat.HUDI, storage, table_base).read_snapshot().live_files
        assert read_back == f.without_stats()

    def test_null_partition_directory(self, storage, table_base, empty_sales):
        client = _created(TableFormat.HUDI, storage, table_base, empty_sales)
        f = InternalDataFile(f"s_type={HIVE_NULL_PARTITION}/n.data", {"s_type": None}, 1, 10)
        client.write_change(TableChange(None, T0, files_added=[f]))
        meta = client.instant_metadata(*client.timeline()[0])
        assert list(meta["partitionToWriteStats"]) == [f"s_type={HIVE_NULL_PARTITION}"]
        (read_back,) = _client(TableFormat.HUDI, storage, table_base).read_snapshot().live_files
        assert read_back.partitions == {"s_type": NULL_TOKEN}


class TestHudiPairing:
    """Pairing removed file slices with added files of one partition."""

    A = "11111111-1111-4111-8111-111111111111"
    B = "22222222-2222-4222-8222-222222222222"

    def _slice(self, file_id, instant="20240101120000000"):
        rel_path = f"s_type=b/{base_file_name(file_id, instant)}"
        return FileSlice(file_id, "s_type=b", rel_path, instant, 1, 10)

    def test_encoded_file_id_first(self):
        rewritten = InternalDataFile(f"s_type=b/{base_file_name(self.B, '20240101120005000')}", {"s_type": "b"}, 1, 10)
        other = InternalDataFile("s_type=b/zz.data", {"s_type": "b"}, 1, 10)
        pairs, removed, added = pair_slices([self._slice(self.B), self._slice(self.A)], [other, rewritten])
        assert [(s.file_id, f.rel_path) for s, f in pairs] == [(self.B, rewritten.rel_path), (self.A, other.rel_path)]
        assert removed == [] and added == []

    def test_lexicographic_leftovers(self):
        other = InternalDataFile("s_type=b/aa.data", {"s_type": "b"}, 1, 10)
        pairs, removed, added = pair_slices([self._slice(self.B), self._slice(self.A)], [other])
        assert [s.file_id for s, _ in pairs] == [self.A]
        assert [s.file_id for s in removed] == [self.B]
        assert added == []


class TestModuleFunctions:
    """Per-format functions taking (storage, base)."""

    def test_delta(self, storage, table_base, empty_sales):
        delta_init(storage, table_base, empty_sales)
        change = TableChange(None, T0 + 1000, files_added=[sales_file("f1", "a")])
        assert delta_write_change(storage, table_base, change, "HUDI:20240101120001000") == 1
        assert delta_read_snapshot(storage, table_base, 0).live_files == frozenset()
        assert len(delta_read_snapshot(storage, table_base).live_files) == 1
        assert [c.added_paths for c in delta_read_changes_since(storage, table_base, 0)] == [{"s_type=a/f1.data"}]
        assert delta_read_source_tags(storage, table_base) == {1: "HUDI:20240101120001000"}

    def test_iceberg(self, storage, table_base, empty_sales):
        iceberg_init(storage, table_base, empty_sales)
        change = TableChange(None, T0 + 1000, files_added=[sales_file("f1", "a")])
        assert iceberg_write_change(storage, table_base, change, "DELTA:1") == 1
        assert iceberg_read_snapshot(storage, table_base, 0).live_files == frozenset()
        assert len(iceberg_read_snapshot(storage, table_base).live_files) == 1
        assert len(iceberg_read_changes_since(storage, table_base, 0)) == 1
        assert iceberg_read_source_tags(storage, table_base) == {1: "DELTA:1"}

    def test_hudi(self, storage, table_base, empty_sales):
        hudi_init(storage, table_base, empty_sales)
        change = TableChange(None, T0 + 1000, files_added=[sales_file("f1", "a")])
        instant = hudi_write_change(storage, table_base, change, "ICEBERG:1")
        assert instant == format_instant(T0 + 1000)
        assert hudi_read_snapshot(storage, table_base, CREATE_TOKEN).live_files == frozenset()
        assert len(hudi_read_snapshot(storage, table_base).live_files) == 1
        assert len(hudi_read_changes_since(storage, table_base, CREATE_TOKEN)) == 1
        assert hudi_read_source_tags(storage, table_base) == {instant: "ICEBERG:1"}
