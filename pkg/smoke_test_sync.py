#!/usr/bin/env python3
"""
Smoke test for the translator.
Runs the three-op sales lifecycle in every source format and syncs it to
both other formats in a scratch directory.
Exit 0 = PASS, non-zero = FAIL
"""

import os
import sys
import tempfile
from collections import Counter
from pathlib import Path

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))


def smoke_test(workdir: Path):
    """Run every directed pair; returns (passed, failed)."""
    from conformance_harness import apply_workload, sales_workload, scan_live
    from internal_model import TableFormat
    from storage import LocalStorage, parse_uri
    from sync_core import DatasetConfig, SyncConfig, run_sync

    tests_passed = 0
    tests_failed = 0
    storage = LocalStorage()
    expected_rows = Counter({("1", "a"): 1, ("2", "b"): 1})

    print("=" * 60)
    print("TRANSLATOR SMOKE TEST - SALES LIFECYCLE")
    print("=" * 60)

    step = 0
    for source in TableFormat:
        targets = tuple(f for f in TableFormat if f is not source)
        base = parse_uri(str(workdir / f"sales-{source.value.lower()}"))

        step += 1
        print(f"\n[{step}] Write sales table as {source.value}...")
        try:
            commits = apply_workload(source, storage, base, sales_workload(), seed=step)
            print(f"    ✅ {len(commits)} commits: {', '.join(c.token for c in commits)}")
            tests_passed += 1
        except Exception as e:
            print(f"    ❌ workload failed: {e}")
            tests_failed += 1
            continue

        step += 1
        print(f"\n[{step}] Sync {source.value} -> {', '.join(t.value for t in targets)}...")
        reports = run_sync(SyncConfig(source, targets, (DatasetConfig(base),)), storage=storage)
        for report in reports:
            print(f"    {'✅' if report.ok else '❌'} {report.summary()}")
        if all(r.ok for r in reports):
            tests_passed += 1
        else:
            tests_failed += 1
            continue

        for target in targets:
            step += 1
            print(f"\n[{step}] Scan {target.value} copy...")
            try:
                schema, rows = scan_live(target, storage, base)
                if rows == expected_rows and schema.names == ["s_id", "s_type"]:
                    print(f"    ✅ rows match: {sorted(rows)}")
                    tests_passed += 1
                else:
                    print(f"    ❌ unexpected rows {sorted(rows)} (schema {schema.names})")
                    tests_failed += 1
            except Exception as e:
                print(f"    ❌ scan failed: {e}")
                tests_failed += 1

        step += 1
        print(f"\n[{step}] Re-sync is a no-op...")
        again = run_sync(SyncConfig(source, targets, (DatasetConfig(base),)), storage=storage)
        translated = sum(r.commits_translated for r in again)
        if translated == 0 and all(r.ok for r in again):
            print("    ✅ 0 commits translated")
            tests_passed += 1
        else:
            print(f"    ❌ second run translated {translated} commits")
            tests_failed += 1

    return tests_passed, tests_failed


if __name__ == "__main__":
    from config import setup_logging
    from telemetry import close_event_logs

    setup_logging()
    with tempfile.TemporaryDirectory(prefix="xtable-smoke-") as tmp:
        passed, failed = smoke_test(Path(tmp))
        close_event_logs()
    print("\n" + "=" * 60)
    print(f"RESULTS: {passed} passed, {failed} failed")
    print("=" * 60)
    sys.exit(1 if failed else 0)
