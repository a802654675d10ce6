"""
Pluggable storage layer

Format readers and writers only touch files through a Storage instance:
list_dir, read_file, put_if_absent and write_replace_atomic, plus exists.
Every read and write is counted per path prefix so tests can prove the
translator never opens a data file.

Only the ``file`` scheme is executable. ``abfs``, ``s3`` and ``gs`` URIs
parse (config files may name them) and fail at open time.
"""
from __future__ import annotations

import logging
import os
import threading
import uuid
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Optional
from urllib.parse import urlsplit

from config import METADATA_DIRS
from errors import ErrorKind, InjectedCrash, XTableError
from utils import redact_secrets

logger = logging.getLogger(__name__)

KNOWN_SCHEMES = ("file", "abfs", "s3", "gs")
EXECUTABLE_SCHEMES = ("file",)

# Staged writes live next to their target until promoted; list_dir hides them
TEMP_PREFIX = ".xtable-tmp-"


# =============================================================================
# Paths
# =============================================================================

def normalize_path(path: str) -> str:
    """Collapse duplicate slashes, drop '.' segments and the trailing slash."""
    absolute = path.startswith("/")
    segments = []
    for segment in path.split("/"):
        if segment in ("", "."):
            continue
        if segment == "..":
            raise XTableError(f"'..' segments are not allowed: {redact_secrets(path)}", kind=ErrorKind.MALFORMED_URI)
        segments.append(segment)
    joined = "/".join(segments)
    if absolute:
        return "/" + joined
    return joined


@dataclass(frozen=True)
class StoragePath:
    scheme: str
    authority: str
    path: str

    def join(self, *parts: str) -> "StoragePath":
        tail = "/".join(p for p in parts if p)
        if not tail:
            return self
        base = self.path if self.path != "/" else ""
        return StoragePath(self.scheme, self.authority, normalize_path(f"{base}/{tail}"))

    @property
    def name(self) -> str:
        return self.path.rsplit("/", 1)[-1]

    @property
    def parent(self) -> "StoragePath":
        head = self.path.rsplit("/", 1)[0] if "/" in self.path else ""
        if not head and self.path.startswith("/"):
            head = "/"
        return StoragePath(self.scheme, self.authority, head)

    def relative_to(self, base: "StoragePath") -> str:
        prefix = base.path.rstrip("/") + "/"
        if (self.scheme, self.authority) != (base.scheme, base.authority) or not self.path.startswith(prefix):
            raise ValueError(f"{self} is not under {base}")
        return self.path[len(prefix):]

    def is_under(self, base: "StoragePath") -> bool:
        return (self.scheme, self.authority) == (base.scheme, base.authority) and (
            self.path == base.path or self.path.startswith(base.path.rstrip("/") + "/")
        )

    def __str__(self) -> str:
        if self.scheme == "file" and not self.authority:
            return self.path
        return f"{self.scheme}://{self.authority}{self.path}"


def parse_uri(raw: str) -> StoragePath:
    """
    Split a table location into scheme, authority and normalized path.

    Bare paths get scheme ``file`` and an empty authority.

    Raises:
        XTableError(MALFORMED_URI): empty input/path, '..' segments, unknown scheme
    """
    if raw is None or not raw.strip():
        raise XTableError("empty URI", kind=ErrorKind.MALFORMED_URI)
    raw = raw.strip()

    if "://" not in raw:
        path = normalize_path(raw)
        if not path:
            raise XTableError(f"empty path in {raw!r}", kind=ErrorKind.MALFORMED_URI)
        return StoragePath("file", "", path)

    parts = urlsplit(raw)
    scheme = parts.scheme.lower()
    if scheme not in KNOWN_SCHEMES:
        raise XTableError(
            f"unknown scheme {scheme!r} in {redact_secrets(raw)} (expected one of {', '.join(KNOWN_SCHEMES)})",
            kind=ErrorKind.MALFORMED_URI,
        )
    path = normalize_path(parts.path)
    if not path:
        raise XTableError(f"empty path in {redact_secrets(raw)}", kind=ErrorKind.MALFORMED_URI)
    return StoragePath(scheme, parts.netloc, path)


# =============================================================================
# Instrumentation
# =============================================================================

@dataclass
class IOCounter:
    opens: int = 0
    bytes: int = 0

    def add(self, other: "IOCounter") -> None:
        self.opens += other.opens
        self.bytes += other.bytes


class StorageStats:
    """
    Thread-safe read/write counters keyed by path prefix.

    Each registered table root splits into one data prefix (the root itself,
    i.e. everything outside the metadata directories) and one prefix per
    metadata directory. Paths outside any root are keyed by their parent.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._roots: set[str] = set()
        self._data_prefixes: set[str] = set()
        self.reads_by_prefix: dict[str, IOCounter] = {}
        self.writes_by_prefix: dict[str, IOCounter] = {}
        self.files_created_by_prefix: dict[str, int] = {}

    def register_data_root(self, base: StoragePath) -> None:
        with self._lock:
            self._roots.add(str(base))
            self._data_prefixes.add(str(base))

    def classify(self, path: StoragePath) -> tuple[str, bool]:
        """Return (prefix, is_data) for *path*."""
        text = str(path)
        with self._lock:
            roots = sorted(self._roots, key=len, reverse=True)
        for root in roots:
            if text.startswith(root.rstrip("/") + "/"):
                first = text[len(root.rstrip("/")) + 1:].split("/", 1)[0]
                if first in METADATA_DIRS:
                    return f"{root.rstrip('/')}/{first}", False
                return root, True
        return str(path.parent), False

    def record_read(self, path: StoragePath, nbytes: int) -> None:
        prefix, _ = self.classify(path)
        with self._lock:
            counter = self.reads_by_prefix.setdefault(prefix, IOCounter())
            counter.opens += 1
            counter.bytes += nbytes

    def record_write(self, path: StoragePath, nbytes: int, created: bool) -> None:
        prefix, _ = self.classify(path)
        with self._lock:
            counter = self.writes_by_prefix.setdefault(prefix, IOCounter())
            counter.opens += 1
            counter.bytes += nbytes
            if created:
                self.files_created_by_prefix[prefix] = self.files_created_by_prefix.get(prefix, 0) + 1

    @staticmethod
    def _within(prefix: str, under: Optional[str]) -> bool:
        return under is None or prefix == under or prefix.startswith(under + "/")

    def data_reads(self, under: Optional[StoragePath | str] = None) -> IOCounter:
        scope = str(under).rstrip("/") if under is not None else None
        total = IOCounter()
        with self._lock:
            for prefix, counter in self.reads_by_prefix.items():
                if prefix in self._data_prefixes and self._within(prefix, scope):
                    total.add(counter)
        return total

    def metadata_reads(self, under: Optional[StoragePath | str] = None) -> IOCounter:
        scope = str(under).rstrip("/") if under is not None else None
        total = IOCounter()
        with self._lock:
            for prefix, counter in self.reads_by_prefix.items():
                if prefix not in self._data_prefixes and self._within(prefix, scope):
                    total.add(counter)
        return total

    def reads_under(self, prefix: StoragePath | str) -> IOCounter:
        text = str(prefix).rstrip("/")
        total = IOCounter()
        with self._lock:
            for key, counter in self.reads_by_prefix.items():
                if self._within(key, text):
                    total.add(counter)
        return total

    def metadata_files_created(self, under: Optional[StoragePath | str] = None) -> int:
        scope = str(under).rstrip("/") if under is not None else None
        with self._lock:
            return sum(
                n for prefix, n in self.files_created_by_prefix.items()
                if prefix not in self._data_prefixes and self._within(prefix, scope)
            )

    def totals(self, under: Optional[StoragePath | str] = None) -> dict[str, int]:
        """Flat counters for telemetry deltas, optionally scoped to one table root."""
        data = self.data_reads(under)
        meta = self.metadata_reads(under)
        return {
            "data_opens": data.opens,
            "data_bytes_read": data.bytes,
            "metadata_opens": meta.opens,
            "metadata_bytes_read": meta.bytes,
            "metadata_files_written": self.metadata_files_created(under),
        }


# =============================================================================
# Storage
# =============================================================================

class WriteOutcome(str, Enum):
    CREATED = "CREATED"
    ALREADY_EXISTS = "ALREADY_EXISTS"


class Storage(ABC):
    """
    File storage used by every format module.

    put_if_absent and write_replace_atomic are built from three staged-write
    primitives (stage, promote, discard) so decorators can interpose between
    a temp write and its publication.
    """

    def __init__(self, stats: Optional[StorageStats] = None):
        self.stats = stats or StorageStats()

    @abstractmethod
    def exists(self, path: StoragePath) -> bool:
        raise NotImplementedError

    @abstractmethod
    def is_dir(self, path: StoragePath) -> bool:
        raise NotImplementedError

    @abstractmethod
    def list_dir(self, path: StoragePath) -> list[str]:
        """Entry names sorted in byte order; staged temp files are hidden."""
        raise NotImplementedError

    @abstractmethod
    def read_file(self, path: StoragePath) -> bytes:
        raise NotImplementedError

    @abstractmethod
    def stage_temp(self, path: StoragePath, data: bytes) -> Any:
        """Write *data* to a hidden temp file next to *path*; return a handle."""
        raise NotImplementedError

    @abstractmethod
    def promote_temp(self, handle: Any, path: StoragePath, replace: bool) -> bool:
        """Publish a staged file at *path*. Returns False if *path* exists and replace is off."""
        raise NotImplementedError

    @abstractmethod
    def discard_temp(self, handle: Any) -> None:
        raise NotImplementedError

    def put_if_absent(self, path: StoragePath, data: bytes) -> WriteOutcome:
        """Create *path* with *data* atomically, never replacing an existing file."""
        handle = self.stage_temp(path, data)
        try:
            created = self.promote_temp(handle, path, replace=False)
        finally:
            self.discard_temp(handle)
        self.stats.record_write(path, len(data), created)
        if not created:
            logger.debug(f"put_if_absent lost the race for {redact_secrets(str(path))}")
            return WriteOutcome.ALREADY_EXISTS
        return WriteOutcome.CREATED

    def write_replace_atomic(self, path: StoragePath, data: bytes) -> None:
        """Replace *path* so readers see either the old or the new content."""
        existed = self.exists(path)
        handle = self.stage_temp(path, data)
        try:
            self.promote_temp(handle, path, replace=True)
        finally:
            self.discard_temp(handle)
        self.stats.record_write(path, len(data), not existed)


class LocalStorage(Storage):
    """Local filesystem storage: temp file + link/rename publication."""

    def _local(self, path: StoragePath) -> Path:
        if path.scheme not in EXECUTABLE_SCHEMES:
            raise XTableError(
                f"scheme {path.scheme!r} is not supported by local storage: {redact_secrets(str(path))}",
                kind=ErrorKind.UNSUPPORTED_SCHEME,
            )
        return Path(path.path)

    def exists(self, path: StoragePath) -> bool:
        return self._local(path).exists()

    def is_dir(self, path: StoragePath) -> bool:
        return self._local(path).is_dir()

    def list_dir(self, path: StoragePath) -> list[str]:
        local = self._local(path)
        try:
            names = os.listdir(local)
        except (FileNotFoundError, NotADirectoryError) as exc:
            raise XTableError(f"not a directory: {redact_secrets(str(path))}", kind=ErrorKind.NOT_FOUND) from exc
        except OSError as exc:
            raise XTableError(f"cannot list {redact_secrets(str(path))}: {exc}", kind=ErrorKind.IO_FAILURE) from exc
        return sorted((n for n in names if not n.startswith(TEMP_PREFIX)), key=lambda n: n.encode("utf-8"))

    def read_file(self, path: StoragePath) -> bytes:
        local = self._local(path)
        try:
            with open(local, "rb") as f:
                data = f.read()
        except (FileNotFoundError, IsADirectoryError) as exc:
            raise XTableError(f"no such file: {redact_secrets(str(path))}", kind=ErrorKind.NOT_FOUND) from exc
        except OSError as exc:
            raise XTableError(f"cannot read {redact_secrets(str(path))}: {exc}", kind=ErrorKind.IO_FAILURE) from exc
        self.stats.record_read(path, len(data))
        return data

    def stage_temp(self, path: StoragePath, data: bytes) -> Path:
        local = self._local(path)
        temp = local.parent / f"{TEMP_PREFIX}{uuid.uuid4().hex}"
        try:
            local.parent.mkdir(parents=True, exist_ok=True)
            with open(temp, "wb") as f:
                f.write(data)
                f.flush()
                os.fsync(f.fileno())
        except OSError as exc:
            temp.unlink(missing_ok=True)
            raise XTableError(f"cannot stage {redact_secrets(str(path))}: {exc}", kind=ErrorKind.IO_FAILURE) from exc
        return temp

    def promote_temp(self, handle: Path, path: StoragePath, replace: bool) -> bool:
        local = self._local(path)
        try:
            if replace:
                os.replace(handle, local)
                return True
            # link() fails if the target exists: an atomic no-replace publish
            os.link(handle, local)
            return True
        except FileExistsError:
            return False
        except OSError as exc:
            raise XTableError(f"cannot publish {redact_secrets(str(path))}: {exc}", kind=ErrorKind.IO_FAILURE) from exc

    def discard_temp(self, handle: Path) -> None:
        try:
            handle.unlink(missing_ok=True)
        except OSError as exc:
            logger.warning(f"⚠️ could not remove temp file {handle}: {exc}")


@dataclass
class FaultPlan:
    """Fail the k-th write operation (1-based). A torn crash leaves the staged temp file behind."""

    fail_at_write: int
    torn: bool = False


class FaultInjectingStorage(Storage):
    """Decorator that crashes a planned write; everything else passes through."""

    def __init__(self, inner: Storage, plan: FaultPlan):
        super().__init__(inner.stats)
        self.inner = inner
        self.plan = plan
        self.write_count = 0
        self.triggered = False
        self._lock = threading.Lock()

    def _before_write(self, path: StoragePath, data: bytes) -> None:
        with self._lock:
            self.write_count += 1
            n = self.write_count
        if n != self.plan.fail_at_write:
            return
        self.triggered = True
        if self.plan.torn:
            self.inner.stage_temp(path, data)
        raise InjectedCrash(f"injected crash at write #{n} ({redact_secrets(str(path))})")

    def exists(self, path: StoragePath) -> bool:
        return self.inner.exists(path)

    def is_dir(self, path: StoragePath) -> bool:
        return self.inner.is_dir(path)

    def list_dir(self, path: StoragePath) -> list[str]:
        return self.inner.list_dir(path)

    def read_file(self, path: StoragePath) -> bytes:
        return self.inner.read_file(path)

    def stage_temp(self, path: StoragePath, data: bytes) -> Any:
        return self.inner.stage_temp(path, data)

    def promote_temp(self, handle: Any, path: StoragePath, replace: bool) -> bool:
        return self.inner.promote_temp(handle, path, replace)

    def discard_temp(self, handle: Any) -> None:
        self.inner.discard_temp(handle)

    def put_if_absent(self, path: StoragePath, data: bytes) -> WriteOutcome:
        self._before_write(path, data)
        return self.inner.put_if_absent(path, data)

    def write_replace_atomic(self, path: StoragePath, data: bytes) -> None:
        self._before_write(path, data)
        self.inner.write_replace_atomic(path, data)


def iter_files(storage: Storage, root: StoragePath) -> Iterator[StoragePath]:
    """Every file below *root*, depth-first in list_dir order."""
    if not storage.exists(root):
        return
    for name in storage.list_dir(root):
        child = root.join(name)
        if storage.is_dir(child):
            yield from iter_files(storage, child)
        else:
            yield child
