"""
Command-line surface: sync, watch, inspect, diff

Exit codes: 0 success (or tables equal), 1 difference found (diff only),
2 usage or config error, 3 runtime failure.
"""
from __future__ import annotations

import logging
import signal
import threading
from collections import Counter
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import typer
import yaml

import config
from errors import ErrorKind, XTableError
from format_base import FormatClient, get_format_client, hive_partition_path
from internal_model import FormatCommitId, InternalSnapshot, TableFormat, compare_snapshots
from storage import LocalStorage, Storage, StoragePath, parse_uri
from sync_core import DatasetConfig, PlanMode, SyncConfig, SyncReport, detect_format, run_sync
from utils import canonical_json, redact_secrets

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DIFFERENT = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3

CONFIG_KEYS = ("sourceFormat", "targetFormats", "datasets")
DATASET_KEYS = ("tableBasePath", "tableName")

app = typer.Typer(add_completion=False, help="Translate table format metadata between Delta, Iceberg and Hudi.")


class SyncMode(str, Enum):
    full = "full"
    incremental = "incremental"


_PLAN_MODES = {SyncMode.full: PlanMode.FULL_SNAPSHOT, SyncMode.incremental: PlanMode.INCREMENTAL}


# =============================================================================
# Config parsing
# =============================================================================

def _config_error(node: Optional[yaml.Node], message: str) -> XTableError:
    if node is not None:
        message = f"line {node.start_mark.line + 1}: {message}"
    return XTableError(message, kind=ErrorKind.CONFIG_INVALID)


def _mapping(node: yaml.Node, allowed: tuple[str, ...], what: str) -> dict[str, tuple[yaml.Node, yaml.Node]]:
    if not isinstance(node, yaml.MappingNode):
        raise _config_error(node, f"{what} must be a mapping")
    entries: dict[str, tuple[yaml.Node, yaml.Node]] = {}
    for key_node, value_node in node.value:
        if not isinstance(key_node, yaml.ScalarNode):
            raise _config_error(key_node, f"{what} keys must be strings")
        key = key_node.value
        if key not in allowed:
            raise _config_error(key_node, f"unknown key {key!r} in {what} (allowed: {', '.join(allowed)})")
        if key in entries:
            raise _config_error(key_node, f"duplicate key {key!r} in {what}")
        entries[key] = (key_node, value_node)
    return entries


def _scalar(node: yaml.Node, field: str) -> str:
    if not isinstance(node, yaml.ScalarNode) or not node.value.strip():
        raise _config_error(node, f"{field} must be a non-empty string")
    return node.value.strip()


def _table_format(node: yaml.Node, field: str) -> TableFormat:
    try:
        return TableFormat.parse(_scalar(node, field))
    except ValueError as exc:
        raise _config_error(node, f"{field}: {exc}") from None


def parse_config(raw: Union[bytes, str]) -> SyncConfig:
    """
    Parse a sync job config.

    Accepts a YAML subset (mappings, sequences, plain scalars) with exactly
    the keys sourceFormat, targetFormats and datasets.

    Raises:
        XTableError(CONFIG_INVALID): with a ``line N:`` prefix when the node is known
    """
    try:
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    except UnicodeDecodeError as exc:
        raise XTableError(f"config is not UTF-8: {exc}", kind=ErrorKind.CONFIG_INVALID) from exc

    try:
        for event in yaml.parse(text, Loader=yaml.SafeLoader):
            if isinstance(event, yaml.AliasEvent) or getattr(event, "anchor", None):
                raise XTableError(
                    f"line {event.start_mark.line + 1}: anchors and aliases are not supported",
                    kind=ErrorKind.CONFIG_INVALID,
                )
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise XTableError(f"invalid YAML: {exc}", kind=ErrorKind.CONFIG_INVALID) from exc
    if root is None:
        raise XTableError("config is empty", kind=ErrorKind.CONFIG_INVALID)

    top = _mapping(root, CONFIG_KEYS, "config")
    for key in CONFIG_KEYS:
        if key not in top:
            raise _config_error(root, f"missing required key {key!r}")

    source_format = _table_format(top["sourceFormat"][1], "sourceFormat")

    targets_key, targets_node = top["targetFormats"]
    if not isinstance(targets_node, yaml.SequenceNode):
        raise _config_error(targets_node, "targetFormats must be a list")
    target_formats = tuple(_table_format(item, "targetFormats") for item in targets_node.value)

    datasets_key, datasets_node = top["datasets"]
    if not isinstance(datasets_node, yaml.SequenceNode):
        raise _config_error(datasets_node, "datasets must be a list")
    datasets = []
    for item in datasets_node.value:
        entry = _mapping(item, DATASET_KEYS, "dataset")
        if "tableBasePath" not in entry:
            raise _config_error(item, "dataset is missing required key 'tableBasePath'")
        path_node = entry["tableBasePath"][1]
        try:
            base = parse_uri(_scalar(path_node, "tableBasePath"))
        except XTableError as exc:
            if exc.kind is ErrorKind.CONFIG_INVALID:
                raise
            raise _config_error(path_node, f"tableBasePath: {exc}") from exc
        table_name = _scalar(entry["tableName"][1], "tableName") if "tableName" in entry else None
        datasets.append(DatasetConfig(base, table_name))

    sync_config = SyncConfig(source_format, target_formats, tuple(datasets))
    try:
        sync_config.validate()
    except XTableError as exc:
        anchor = datasets_key if "tableBasePath" in exc.args[0] else targets_key
        raise _config_error(anchor, exc.args[0]) from None
    return sync_config


def load_config(path: Path) -> SyncConfig:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise XTableError(f"cannot read config {path}: {exc}", kind=ErrorKind.CONFIG_INVALID) from exc
    return parse_config(raw)


def _load_or_exit(path: Path) -> SyncConfig:
    try:
        return load_config(path)
    except XTableError as exc:
        typer.echo(f"❌ {path}: {exc}", err=True)
        raise typer.Exit(EXIT_USAGE)


# =============================================================================
# sync / watch
# =============================================================================

def print_reports(reports: list[SyncReport]) -> int:
    """Echo per-table summaries; returns the exit code for the run."""
    for report in reports:
        typer.echo(report.summary())
    total = sum(r.commits_translated for r in reports)
    typer.echo(f"{total} commits translated")
    return EXIT_RUNTIME if any(not r.ok for r in reports) else EXIT_OK


@app.command("sync")
def cmd_sync(
    config_path: Path = typer.Option(..., "--config", help="Sync job YAML file"),
    mode: Optional[SyncMode] = typer.Option(None, "--mode", help="Force full or incremental planning"),
) -> None:
    """Run one sync of every dataset to every target format."""
    config.setup_logging()
    sync_config = _load_or_exit(config_path)
    reports = run_sync(sync_config, _PLAN_MODES.get(mode) if mode else None)
    raise typer.Exit(print_reports(reports))


def watch_loop(
    sync_config: SyncConfig,
    interval: float,
    stop_event: threading.Event,
    *,
    max_runs: Optional[int] = None,
    storage: Optional[Storage] = None,
) -> int:
    """
    Run run_sync every *interval* seconds until *stop_event* is set.

    Runs never overlap. A failing run is logged and the loop carries on.
    Returns the number of completed runs.
    """
    interval = max(interval, config.WATCH_MIN_INTERVAL)
    runs = 0
    while not stop_event.is_set():
        try:
            reports = run_sync(sync_config, storage=storage, stop_event=stop_event)
            translated = sum(r.commits_translated for r in reports)
            failed = [r for r in reports if not r.ok]
            if translated:
                logger.info(f"✅ watch run {runs + 1}: {translated} commits translated")
            for report in failed:
                logger.warning(f"⚠️ watch run {runs + 1}: {report.summary()}")
        except Exception as e:
            logger.error(f"❌ watch run {runs + 1} failed: {redact_secrets(str(e))}")
        runs += 1
        if max_runs is not None and runs >= max_runs:
            break
        stop_event.wait(interval)
    return runs


@app.command("watch")
def cmd_watch(
    config_path: Path = typer.Option(..., "--config", help="Sync job YAML file"),
    interval: float = typer.Option(..., "--interval", help="Seconds between runs (at least 1)"),
) -> None:
    """Sync periodically until interrupted."""
    config.setup_logging(default_level="INFO")
    sync_config = _load_or_exit(config_path)
    stop_event = threading.Event()

    def _stop(signum, _frame):
        logger.info(f"🛑 signal {signum}: stopping after the in-flight dataset")
        stop_event.set()

    if threading.current_thread() is threading.main_thread():
        signal.signal(signal.SIGINT, _stop)
        signal.signal(signal.SIGTERM, _stop)
    if interval < config.WATCH_MIN_INTERVAL:
        logger.warning(f"⚠️ --interval {interval} raised to {config.WATCH_MIN_INTERVAL}")
    runs = watch_loop(sync_config, interval, stop_event)
    typer.echo(f"watch stopped after {runs} runs")
    raise typer.Exit(EXIT_OK)


# =============================================================================
# inspect / diff
# =============================================================================

def _parse_path(raw: str) -> StoragePath:
    try:
        return parse_uri(raw)
    except XTableError as exc:
        raise typer.BadParameter(str(exc), param_hint="--path")


def _parse_format(raw: str, flag: str) -> TableFormat:
    try:
        return TableFormat.parse(raw)
    except ValueError as exc:
        raise typer.BadParameter(str(exc), param_hint=flag)


def inspect_document(client: FormatClient, as_of: Optional[str] = None) -> dict:
    """The --json document of one format at *base*."""
    snapshot = client.read_snapshot(as_of)
    history = client.commit_history()
    if as_of is not None:
        limit = snapshot.source_commit.sort_key
        history = [c for c in history if client.commit_id(c.token).sort_key <= limit]
    columns = snapshot.partition_columns
    breakdown = Counter(hive_partition_path(columns, f.partitions) for f in snapshot.live_files)
    return {
        "format": client.format.value,
        "commits": [c.to_dict() for c in history],
        "schema": snapshot.schema.to_dict(),
        "partitions": {"columns": columns, "files_per_partition": dict(sorted(breakdown.items()))},
        "live_files": [
            {"rel_path": f.rel_path, "record_count": f.record_count, "partition_values": f.partitions}
            for f in sorted(snapshot.live_files, key=lambda f: f.rel_path)
        ],
    }


def _render_inspect(doc: dict) -> str:
    lines = [f"== {doc['format']} =="]
    lines.append(f"commits ({len(doc['commits'])}):")
    for commit in doc["commits"]:
        tag = f"  <- {commit['source_tag']}" if commit["source_tag"] else ""
        lines.append(f"  {commit['token']:>20}  {commit['timestamp_ms']:>14}  {commit['operation']}{tag}")
    lines.append("schema:")
    for f in doc["schema"]["fields"]:
        null = "" if f["nullable"] else " NOT NULL"
        lines.append(f"  {f['fieldId']:>3} {f['name']} {f['type']}{null}")
    columns = doc["partitions"]["columns"]
    lines.append(f"partition columns: {', '.join(columns) if columns else '(unpartitioned)'}")
    lines.append(f"live files: {len(doc['live_files'])}")
    for partition, count in doc["partitions"]["files_per_partition"].items():
        lines.append(f"  {partition or '(root)'}: {count}")
    return "\n".join(lines)


@app.command("inspect")
def cmd_inspect(
    path: str = typer.Option(..., "--path", help="Table base path or URI"),
    table_format: str = typer.Option("auto", "--format", help="DELTA, ICEBERG, HUDI or auto"),
    as_of: Optional[str] = typer.Option(None, "--as-of", help="Commit token to inspect"),
    as_json: bool = typer.Option(False, "--json", help="Emit canonical JSON"),
) -> None:
    """Show commit history, schema, partitioning and live files."""
    config.setup_logging()
    base = _parse_path(path)
    storage = LocalStorage()
    try:
        if table_format.strip().lower() == "auto":
            formats = sorted(detect_format(storage, base), key=lambda f: f.value)
            if not formats:
                raise XTableError(f"no table format detected at {base}", kind=ErrorKind.NO_TABLE)
        else:
            formats = [_parse_format(table_format, "--format")]
        if as_of is not None and len(formats) > 1:
            raise typer.BadParameter("--as-of needs --format when several formats are present", param_hint="--as-of")
        docs = [inspect_document(get_format_client(f, storage, base), as_of) for f in formats]
    except XTableError as exc:
        typer.echo(f"❌ {redact_secrets(str(exc))}", err=True)
        raise typer.Exit(EXIT_RUNTIME)
    except ValueError as exc:
        typer.echo(f"❌ bad --as-of token: {exc}", err=True)
        raise typer.Exit(EXIT_USAGE)

    if as_json:
        typer.echo(canonical_json(docs[0] if len(docs) == 1 else docs))
    else:
        typer.echo("\n\n".join(_render_inspect(doc) for doc in docs))
    raise typer.Exit(EXIT_OK)


def latest_common_tokens(clients: list[FormatClient]) -> dict[TableFormat, str]:
    """
    Per-format tokens of the newest source commit every client reflects.

    A client reflects its own commits directly and translated commits
    through their source tags.

    Raises:
        XTableError(NOT_FOUND): no source commit is shared by all clients
    """
    reflected: list[dict[str, str]] = []
    for client in clients:
        tags = client.source_tag_index()
        for record in client.commit_history():
            tags.setdefault(client.commit_id(record.token).tag(), record.token)
        reflected.append(tags)
    common = set(reflected[0]).intersection(*reflected[1:])
    candidates = []
    for tag in common:
        try:
            candidates.append(FormatCommitId.from_tag(tag))
        except ValueError:
            continue
    if not candidates:
        raise XTableError("the formats share no source commit", kind=ErrorKind.NOT_FOUND)
    # a single source format wrote every tag; order within it
    source_format = max(candidates, key=lambda c: sum(1 for d in candidates if d.format is c.format)).format
    newest = max((c for c in candidates if c.format is source_format), key=lambda c: c.sort_key)
    return {client.format: tags[newest.tag()] for client, tags in zip(clients, reflected)}


def diff_report(snapshots: list[InternalSnapshot], formats: list[TableFormat]) -> list[str]:
    """Differences of every snapshot against the first; empty means equal."""
    lines = []
    reference = snapshots[0]
    for table_format, snapshot in zip(formats[1:], snapshots[1:]):
        for difference in compare_snapshots(reference, snapshot):
            lines.append(f"{formats[0].value} vs {table_format.value}: {difference}")
    return lines


@app.command("diff")
def cmd_diff(
    path: str = typer.Option(..., "--path", help="Table base path or URI"),
    formats: str = typer.Option(..., "--formats", help="Comma-separated formats to compare, e.g. DELTA,ICEBERG"),
    as_of_latest_common: bool = typer.Option(
        False, "--as-of-latest-common", help="Compare at the newest source commit all formats reflect"
    ),
) -> None:
    """Compare the same table across formats."""
    config.setup_logging()
    base = _parse_path(path)
    selected = [_parse_format(f, "--formats") for f in formats.split(",") if f.strip()]
    if len(selected) < 2 or len(set(selected)) != len(selected):
        raise typer.BadParameter("name at least two distinct formats", param_hint="--formats")

    storage = LocalStorage()
    try:
        clients = [get_format_client(f, storage, base) for f in selected]
        as_of = latest_common_tokens(clients) if as_of_latest_common else {}
        snapshots = [c.read_snapshot(as_of.get(c.format)) for c in clients]
    except XTableError as exc:
        typer.echo(f"❌ {redact_secrets(str(exc))}", err=True)
        raise typer.Exit(EXIT_RUNTIME)

    differences = diff_report(snapshots, selected)
    if not differences:
        typer.echo(f"✅ {', '.join(f.value for f in selected)} are equal ({len(snapshots[0].live_files)} live files)")
        raise typer.Exit(EXIT_OK)
    for line in differences:
        typer.echo(line)
    typer.echo(f"{len(differences)} differences")
    raise typer.Exit(EXIT_DIFFERENT)


def main() -> None:
    app()


if __name__ == "__main__":
    main()
