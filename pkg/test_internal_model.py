"""
Unit tests for the format-neutral model.
Run: pytest test_internal_model.py -v
"""
import math
from datetime import date, datetime

import pytest
import pytz
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import sales_file
from errors import ErrorKind, XTableError
from internal_model import (
    NULL_TOKEN,
    ColumnStat,
    FieldType,
    FormatCommitId,
    InternalDataFile,
    InternalSchema,
    InternalSnapshot,
    TableChange,
    TableFormat,
    apply_change,
    compare_snapshots,
    diff_filesets,
    fold_changes,
    parse_value,
    partition_spec_for,
    render_value,
    validate_rel_path,
    validate_schema_evolution,
    validate_snapshot,
)

VALUES_BY_TYPE = {
    FieldType.BOOL: st.booleans(),
    FieldType.INT32: st.integers(min_value=-(2 ** 31), max_value=2 ** 31 - 1),
    FieldType.INT64: st.integers(min_value=-(2 ** 63), max_value=2 ** 63 - 1),
    FieldType.FLOAT64: st.floats(allow_nan=True, allow_infinity=True)
    | st.sampled_from([math.nan, math.inf, -math.inf]),
    # the null token is reserved
    FieldType.STRING: st.text().filter(lambda s: s != NULL_TOKEN),
    FieldType.DATE: st.dates(),
    FieldType.TIMESTAMP_MICROS: st.datetimes(timezones=st.just(pytz.UTC)),
}


class TestCanonicalValues:
    """Canonical string encodings per field type."""

    def test_scalar_renderings(self):
        assert render_value(FieldType.BOOL, True) == "true"
        assert render_value(FieldType.INT32, -7) == "-7"
        assert render_value(FieldType.FLOAT64, 1.5) == "1.5"
        assert render_value(FieldType.DATE, date(2024, 2, 29)) == "2024-02-29"
        assert render_value(FieldType.STRING, "a") == "a"

    def test_timestamp_is_utc_micros(self):
        moment = datetime(2024, 1, 1, 12, 0, 0, 5, tzinfo=pytz.UTC)
        assert render_value(FieldType.TIMESTAMP_MICROS, moment) == "2024-01-01T12:00:00.000005Z"

    def test_none_renders_null_token(self):
        assert render_value(FieldType.INT64, None) == NULL_TOKEN
        assert parse_value(FieldType.INT64, NULL_TOKEN) is None

    def test_float_specials(self):
        assert render_value(FieldType.FLOAT64, math.inf) == "Infinity"
        assert math.isnan(parse_value(FieldType.FLOAT64, "NaN"))

    @pytest.mark.parametrize("field_type,text", [
        (FieldType.INT32, "007"),
        (FieldType.INT32, "-0"),
        (FieldType.INT32, str(2 ** 31)),
        (FieldType.BOOL, "True"),
        (FieldType.TIMESTAMP_MICROS, "2024-01-01T00:00:00Z"),
    ])
    def test_non_canonical_rejected(self, field_type, text):
        with pytest.raises(ValueError):
            parse_value(field_type, text)

    def test_naive_timestamp_rejected(self):
        with pytest.raises(ValueError):
            render_value(FieldType.TIMESTAMP_MICROS, datetime(2024, 1, 1))

    @pytest.mark.parametrize("field_type", list(FieldType), ids=lambda t: t.value)
    @given(data=st.data())
    @settings(max_examples=1000, derandomize=True, deadline=None)
    def test_render_parse_round_trip(self, field_type, data):
        value = data.draw(VALUES_BY_TYPE[field_type])
        text = render_value(field_type, value)
        parsed = parse_value(field_type, text)
        assert render_value(field_type, parsed) == text
        if not (field_type is FieldType.FLOAT64 and math.isnan(value)):
            assert parsed == value


class TestCommitIds:
    """Ordering and tags of per-format commit tokens."""

    def test_delta_versions_order_numerically(self):
        assert FormatCommitId(TableFormat.DELTA, "9") < FormatCommitId(TableFormat.DELTA, "10")

    def test_hudi_instants_order_lexically(self):
        earlier = FormatCommitId(TableFormat.HUDI, "20240101120000000")
        later = FormatCommitId(TableFormat.HUDI, "20240101120000001")
        assert earlier < later

    def test_cross_format_ordering_refused(self):
        with pytest.raises(TypeError):
            _ = FormatCommitId(TableFormat.DELTA, "1") < FormatCommitId(TableFormat.ICEBERG, "2")

    def test_tag_round_trip(self):
        commit = FormatCommitId(TableFormat.ICEBERG, "4")
        assert commit.tag() == "ICEBERG:4"
        assert FormatCommitId.from_tag("iceberg:4") == commit

    def test_malformed_tag(self):
        with pytest.raises(ValueError):
            FormatCommitId.from_tag("DELTA-4")


class TestChanges:
    """Applying, folding and diffing file deltas."""

    def test_apply_change(self):
        a, b = sales_file("a", "a"), sales_file("b", "b")
        live = apply_change([a], TableChange(None, 0, files_added=[b]))
        assert live == frozenset({a, b})
        live = apply_change(live, TableChange(None, 0, files_removed=[a.rel_path]))
        assert live == frozenset({b})

    def test_remove_not_live(self):
        with pytest.raises(XTableError) as exc_info:
            apply_change([], TableChange(None, 0, files_removed=["s_type=a/x.data"]))
        assert exc_info.value.kind is ErrorKind.REMOVED_NOT_LIVE

    def test_duplicate_add(self):
        a = sales_file("a", "a")
        with pytest.raises(XTableError) as exc_info:
            apply_change([a], TableChange(None, 0, files_added=[a]))
        assert exc_info.value.kind is ErrorKind.DUPLICATE_ADD

    def test_rewrite_of_partition_b(self):
        f1, f2, f3 = sales_file("f1", "a"), sales_file("f2", "b"), sales_file("f3", "b")
        live = apply_change([f1, f2], TableChange(None, 0, files_added=[f3], files_removed=[f2.rel_path]))
        assert live == frozenset({f1, f3})

    def test_readding_a_live_path_is_refused_even_when_removed(self):
        a = sales_file("a", "a")
        rewritten = sales_file("a", "a", records=2)
        with pytest.raises(XTableError) as exc_info:
            apply_change([a], TableChange(None, 0, files_added=[rewritten], files_removed=[a.rel_path]))
        assert exc_info.value.kind is ErrorKind.DUPLICATE_ADD

    def test_fold_empty_changes(self):
        a = sales_file("a", "a")
        assert fold_changes([a], [TableChange(None, 0), TableChange(None, 1)]) == frozenset({a})

    def test_diff_filesets_is_minimal(self):
        a, b, c = sales_file("a", "a"), sales_file("b", "b"), sales_file("c", "b")
        change = diff_filesets([a, b], [b, c])
        assert change.added_paths == {c.rel_path}
        assert change.files_removed == frozenset({a.rel_path})
        assert apply_change([a, b], change) == frozenset({b, c})

    @given(
        st.sets(st.integers(min_value=0, max_value=30), max_size=12),
        st.sets(st.integers(min_value=0, max_value=30), max_size=12),
    )
    @settings(max_examples=60)
    def test_diff_then_apply_reaches_desired(self, current_ids, desired_ids):
        current = [sales_file(f"f{i}", "a") for i in current_ids]
        desired = [sales_file(f"f{i}", "a") for i in desired_ids]
        change = diff_filesets(current, desired)
        assert not (change.added_paths & change.files_removed)
        assert apply_change(current, change) == frozenset(desired)

    def test_diff_of_equal_sets_is_empty(self):
        a = sales_file("a", "a")
        assert diff_filesets([a], [a]).is_empty


class TestValidation:
    """Snapshot and schema invariants."""

    def test_valid_snapshot(self, empty_sales):
        snapshot = empty_sales.with_live_files([sales_file("a", "a"), sales_file("b", "b")])
        assert validate_snapshot(snapshot) == []

    def test_partition_keys_must_match_spec(self, empty_sales):
        bad = InternalDataFile("x.data", {"other": "1"}, 1, 1)
        violations = validate_snapshot(empty_sales.with_live_files([bad]))
        assert any("partition keys" in v for v in violations)

    def test_shared_rel_path_detected(self, empty_sales):
        one = sales_file("a", "a", records=1)
        two = sales_file("a", "a", records=2)
        violations = validate_snapshot(empty_sales.with_live_files([one, two]))
        assert any("share this rel_path" in v for v in violations)

    def test_stats_min_above_max(self, empty_sales):
        f = sales_file("a", "a", stats=(ColumnStat(1, "5", "3", 0),))
        violations = validate_snapshot(empty_sales.with_live_files([f]))
        assert any("min > max" in v for v in violations)

    @pytest.mark.parametrize("rel_path", ["/abs.data", "a/../b.data", "_delta_log/x.json", "metadata/v1.json", ""])
    def test_illegal_rel_paths(self, rel_path):
        assert validate_rel_path(rel_path) is not None

    def test_schema_evolution_append_only(self, sales_schema):
        assert validate_schema_evolution(sales_schema, sales_schema.add_field("amount", FieldType.FLOAT64)) == []

    def test_schema_evolution_drop_rejected(self, sales_schema):
        dropped = InternalSchema(1, sales_schema.fields[:1])
        assert validate_schema_evolution(sales_schema, dropped)

    def test_partition_spec_unknown_column(self, sales_schema):
        with pytest.raises(XTableError) as exc_info:
            partition_spec_for(sales_schema, ["missing"])
        assert exc_info.value.kind is ErrorKind.INVALID_CHANGE


class TestCompareSnapshots:
    """Conformance equality across formats."""

    def _snapshot(self, empty_sales, *files) -> InternalSnapshot:
        return empty_sales.with_live_files(files)

    def test_equal(self, empty_sales):
        a = self._snapshot(empty_sales, sales_file("a", "a"))
        assert compare_snapshots(a, a) == []

    def test_stats_ignored_when_one_side_lacks_them(self, empty_sales):
        with_stats = self._snapshot(empty_sales, sales_file("a", "a", stats=(ColumnStat(1, "1", "1", 0),)))
        without = self._snapshot(empty_sales, sales_file("a", "a"))
        assert compare_snapshots(with_stats, without) == []

    def test_missing_file_reported(self, empty_sales):
        left = self._snapshot(empty_sales, sales_file("a", "a"), sales_file("b", "b"))
        right = self._snapshot(empty_sales, sales_file("a", "a"))
        assert compare_snapshots(left, right) == ["missing on right: s_type=b/b.data"]

    def test_record_count_mismatch(self, empty_sales):
        left = self._snapshot(empty_sales, sales_file("a", "a", records=1))
        right = self._snapshot(empty_sales, sales_file("a", "a", records=2))
        assert len(compare_snapshots(left, right)) == 1

    def test_partition_value_mismatch(self, empty_sales):
        left = self._snapshot(empty_sales, InternalDataFile("p/a.data", {"s_type": "x/y"}, 1, 10))
        right = self._snapshot(empty_sales, InternalDataFile("p/a.data", {"s_type": "x"}, 1, 10))
        assert compare_snapshots(left, right) == [
            "partition values mismatch for p/a.data: {'s_type': 'x/y'} != {'s_type': 'x'}"
        ]

    def test_schema_mismatch(self, empty_sales, sales_schema):
        evolved = InternalSnapshot(
            None, 0, sales_schema.add_field("x", FieldType.BOOL), empty_sales.partition_spec, table_name="sales"
        )
        assert any("schema mismatch" in d for d in compare_snapshots(empty_sales, evolved))
