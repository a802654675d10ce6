"""
Configuration for the table format translator
Process-level settings from environment variables; the sync job itself is
described by the YAML config file read by the CLI.
"""
import logging
import os
import random
import sys
from typing import Optional

# Load environment variables from .env file
try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass  # dotenv not required, use environment variables directly


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ('1', 'true', 'yes')


# Logging
LOG_LEVEL = os.getenv('XTABLE_LOG_LEVEL', '').strip().upper()
LOG_JSON = _env_bool('XTABLE_LOG_JSON', 'false')

# Test mode: seeded ids (snapshot ids, file-group ids, table uuids)
_raw_seed = os.getenv('XTABLE_SEED', '').strip()
try:
    SEED: Optional[int] = int(_raw_seed) if _raw_seed else None
except ValueError:
    print(f"WARNING: XTABLE_SEED={_raw_seed!r} is not an integer - using entropy", file=sys.stderr)
    SEED = None

# Dataset-level parallelism for run_sync
MAX_WORKERS = max(1, int(os.getenv('XTABLE_MAX_WORKERS', '1')))

# Watch loop floor (seconds)
WATCH_MIN_INTERVAL = max(1.0, float(os.getenv('XTABLE_WATCH_MIN_INTERVAL', '1.0')))

# Mirror telemetry events to stderr logging
EVENTS_MIRROR = _env_bool('XTABLE_EVENTS_MIRROR', 'true')

# Metadata directories owned by each format (plus translator state)
DELTA_LOG_DIR = '_delta_log'
ICEBERG_METADATA_DIR = 'metadata'
HUDI_METADATA_DIR = '.hoodie'
XTABLE_STATE_DIR = '_xtable'
METADATA_DIRS = (DELTA_LOG_DIR, ICEBERG_METADATA_DIR, HUDI_METADATA_DIR, XTABLE_STATE_DIR)

# Data payload extension for every format
DATA_FILE_EXTENSION = '.data'

# Sync state file layout version
STATE_VERSION = 1


def make_rng(seed: Optional[int] = None) -> random.Random:
    """PRNG for ids: seeded when a seed is given or XTABLE_SEED is set."""
    if seed is None:
        seed = SEED
    if seed is None:
        return random.SystemRandom()
    return random.Random(seed)


def setup_logging(default_level: str = 'WARNING') -> None:
    """Configure root logging once for an entry point."""
    level = getattr(logging, LOG_LEVEL or default_level, logging.WARNING)
    handler = logging.StreamHandler(sys.stderr)
    if LOG_JSON:
        from pythonjsonlogger import jsonlogger
        handler.setFormatter(jsonlogger.JsonFormatter('%(asctime)s %(name)s %(levelname)s %(message)s'))
    else:
        handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)
