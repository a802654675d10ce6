"""
Shared pytest fixtures: scratch table locations, storage, sample schemas.
"""
import pytest

from internal_model import (
    FieldType,
    InternalDataFile,
    InternalField,
    InternalSchema,
    InternalSnapshot,
    partition_spec_for,
)
from storage import LocalStorage, parse_uri
from telemetry import close_event_logs


@pytest.fixture(autouse=True)
def _release_event_logs():
    yield
    close_event_logs()


@pytest.fixture
def storage():
    return LocalStorage()


@pytest.fixture
def table_base(tmp_path):
    return parse_uri(str(tmp_path / "table"))


@pytest.fixture
def sales_schema():
    return InternalSchema(0, (
        InternalField(1, "s_id", FieldType.INT32, nullable=False),
        InternalField(2, "s_type", FieldType.STRING),
    ))


@pytest.fixture
def empty_sales(sales_schema):
    """Freshly created sales table, partitioned by s_type."""
    return InternalSnapshot(
        source_commit=None,
        timestamp_ms=1704110400000,
        schema=sales_schema,
        partition_spec=partition_spec_for(sales_schema, ["s_type"]),
        table_name="sales",
    )


def sales_file(name: str, s_type: str, records: int = 1, stats=None) -> InternalDataFile:
    """Data file descriptor under the s_type partition directory."""
    return InternalDataFile(
        rel_path=f"s_type={s_type}/{name}.data",
        partition_values={"s_type": s_type},
        record_count=records,
        file_size_bytes=100 * records,
        column_stats=stats,
    )
