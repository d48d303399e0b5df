"""Instrumented storage-tier abstraction.

A tier is a rooted directory standing in for one device class (spinning
disk, SSD, NVM card, parallel FS). Every byte moved through the tier is
counted, an optional bandwidth throttle emulates a slow device
deterministically, and an optional per-operation latency emulates seek or
network round-trip cost. All paths are resolved under the tier root; the
adapter never touches files outside it.
"""

from __future__ import annotations

import fnmatch
import os
import threading
import time
from pathlib import Path

from .errors import InvalidArgument, IoError, NotFound, QuotaExceeded

CHUNK_SIZE = 1024 * 1024


class _Pacer:
    """Serializing bandwidth gate: moving n bytes occupies the device n/rate seconds.

    The schedule is absolute, so concurrent callers share the budget and idle
    time earns no credit (no burst allowance). To keep sleep-syscall overshoot
    from accumulating across many small chunks, a call sleeps only once the
    outstanding deficit reaches ``quantum`` seconds; ``flush`` drains the rest,
    so a stream paced to completion never runs faster than ``rate``. Mid-stream
    transfers lead the schedule by at most one quantum.
    """

    QUANTUM_S = 0.04

    def __init__(self, rate: float):
        self.rate = float(rate)
        self._lock = threading.Lock()
        self._ready_at = time.monotonic()

    def wait(self, nbytes: int) -> None:
        if nbytes <= 0:
            return
        with self._lock:
            now = time.monotonic()
            start = max(now, self._ready_at)
            self._ready_at = start + nbytes / self.rate
            deadline = self._ready_at
        if deadline - now >= self.QUANTUM_S:
            self._sleep_until(deadline)

    def flush(self) -> None:
        with self._lock:
            deadline = self._ready_at
        self._sleep_until(deadline)

    @staticmethod
    def _sleep_until(deadline: float) -> None:
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return
            time.sleep(remaining)


class StorageTier:
    """A rooted, counted, optionally throttled directory.

    Parameters
    ----------
    label:
        Short device name ("hdd", "optane", ...). Used in trace CSV headers.
    root:
        Directory all tier paths resolve under. Created if absent.
    throttle:
        Max sustained bandwidth in bytes/second, or None for unthrottled.
    capacity:
        Byte cap for the tier; writes that would exceed it raise
        QuotaExceeded. None means uncapped.
    latency:
        Fixed per-operation delay in seconds applied to each read/write
        call (seek analog). Concurrent operations overlap their latencies.
    """

    def __init__(
        self,
        label: str,
        root: str | os.PathLike,
        throttle: float | None = None,
        capacity: int | None = None,
        latency: float = 0.0,
    ):
        if throttle is not None and throttle <= 0:
            raise InvalidArgument(f"throttle must be positive, got {throttle}")
        if capacity is not None and capacity < 0:
            raise InvalidArgument(f"capacity must be >= 0, got {capacity}")
        self.label = label
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)
        self.throttle = throttle
        self.capacity = capacity
        self.latency = latency
        self._pacer = _Pacer(throttle) if throttle else None
        self._lock = threading.Lock()
        self._read_bytes = 0
        self._write_bytes = 0
        self._used_bytes = self._scan_usage()
        self._dirty: set[Path] = set()
        self._inflight_writes = 0
        self._write_cv = threading.Condition(self._lock)

    def __repr__(self) -> str:
        return f"StorageTier({self.label!r}, root={str(self.root)!r})"

    # -- path handling ------------------------------------------------------

    def resolve(self, relpath: str | os.PathLike) -> Path:
        """Resolve *relpath* under the tier root, rejecting traversal outside it."""
        p = (self.root / relpath).resolve()
        if p != self.root and self.root not in p.parents:
            raise InvalidArgument(f"path escapes tier root: {relpath}")
        return p

    def exists(self, relpath: str) -> bool:
        return self.resolve(relpath).is_file()

    def file_size(self, relpath: str) -> int:
        p = self.resolve(relpath)
        if not p.is_file():
            raise NotFound(relpath)
        return p.stat().st_size

    def list_files(self, pattern: str = "*") -> list[str]:
        """Relative paths of all regular files under root matching *pattern*."""
        out = []
        for p in self.root.rglob("*"):
            if p.is_file():
                rel = p.relative_to(self.root).as_posix()
                if fnmatch.fnmatch(rel, pattern):
                    out.append(rel)
        return sorted(out)

    # -- counters -----------------------------------------------------------

    def snapshot_counters(self) -> tuple[int, int]:
        """Current (read_bytes, write_bytes) totals as one consistent pair."""
        with self._lock:
            return self._read_bytes, self._write_bytes

    def _count_read(self, n: int) -> None:
        with self._lock:
            self._read_bytes += n

    def _count_write(self, n: int) -> None:
        with self._lock:
            self._write_bytes += n

    def _scan_usage(self) -> int:
        return sum(p.stat().st_size for p in self.root.rglob("*") if p.is_file())

    # -- whole-file operations ---------------------------------------------

    def read_file(self, relpath: str) -> bytes:
        """Read the full contents of a file, counting and pacing each chunk."""
        path = self.resolve(relpath)
        if not path.is_file():
            raise NotFound(relpath)
        self._apply_latency()
        chunks = []
        try:
            with open(path, "rb") as f:
                while True:
                    chunk = f.read(CHUNK_SIZE)
                    if not chunk:
                        break
                    if self._pacer:
                        self._pacer.wait(len(chunk))
                    self._count_read(len(chunk))
                    chunks.append(chunk)
        except OSError as e:
            raise IoError(relpath, f"read failed on {relpath}: {e}") from e
        if self._pacer:
            self._pacer.flush()
        return b"".join(chunks)

    def write_file(self, relpath: str, data: bytes) -> None:
        """Write *data* to a file (truncating), counting and pacing each chunk.

        The capacity check runs against the whole payload before any byte is
        written, so a rejected write leaves the previous file intact.
        """
        if self.capacity is not None:
            path = self.resolve(relpath)
            old_size = path.stat().st_size if path.is_file() else 0
            with self._lock:
                if self._used_bytes - old_size + len(data) > self.capacity:
                    raise QuotaExceeded(
                        relpath,
                        f"write of {len(data)} bytes to {relpath} exceeds "
                        f"capacity {self.capacity}",
                    )
        with self.open_writer(relpath) as w:
            for off in range(0, len(data), CHUNK_SIZE):
                w.write(data[off : off + CHUNK_SIZE])

    def delete_file(self, relpath: str) -> None:
        path = self.resolve(relpath)
        if not path.is_file():
            raise NotFound(relpath)
        size = path.stat().st_size
        try:
            path.unlink()
        except OSError as e:
            raise IoError(relpath, f"delete failed on {relpath}: {e}") from e
        with self._lock:
            self._used_bytes -= size
            self._dirty.discard(path)

    def rename(self, src: str, dst: str) -> None:
        """Atomically replace *dst* with *src* (same tier only)."""
        spath = self.resolve(src)
        if not spath.is_file():
            raise NotFound(src)
        dpath = self.resolve(dst)
        dst_size = dpath.stat().st_size if dpath.is_file() else 0
        try:
            os.replace(spath, dpath)
        except OSError as e:
            raise IoError(src, f"rename {src} -> {dst} failed: {e}") from e
        with self._lock:
            self._used_bytes -= dst_size
            self._dirty.discard(spath)
            self._dirty.add(dpath)

    # -- streaming handles ---------------------------------------------------

    def open_reader(self, relpath: str) -> "TierReader":
        path = self.resolve(relpath)
        if not path.is_file():
            raise NotFound(relpath)
        self._apply_latency()
        return TierReader(self, relpath, path)

    def open_writer(self, relpath: str) -> "TierWriter":
        path = self.resolve(relpath)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise IoError(relpath, f"cannot create parent of {relpath}: {e}") from e
        self._apply_latency()
        old_size = path.stat().st_size if path.is_file() else 0
        with self._lock:
            self._inflight_writes += 1
        return TierWriter(self, relpath, path, old_size)

    # -- durability and cache advice -----------------------------------------

    def sync(self) -> None:
        """Block until all writes issued before this call are durable.

        Waits out any in-flight writers, then fsyncs every file written since
        the previous sync.
        """
        with self._write_cv:
            while self._inflight_writes > 0:
                self._write_cv.wait()
            dirty = list(self._dirty)
            self._dirty.clear()
        for path in dirty:
            try:
                if not path.is_file():
                    continue
                fd = os.open(path, os.O_RDONLY)
                try:
                    os.fsync(fd)
                finally:
                    os.close(fd)
            except OSError as e:
                raise IoError(str(path), f"fsync failed on {path}: {e}") from e
        try:
            fd = os.open(self.root, os.O_RDONLY)
            try:
                os.fsync(fd)
            finally:
                os.close(fd)
        except OSError:
            pass  # some filesystems refuse directory fsync; file fsyncs already done

    def advise_dont_need(self, relpath: str) -> bool:
        """Hint the OS that cached pages for the file may be dropped.

        Best effort: returns True if the advice was delivered, False when the
        platform lacks the call or rejects it. Never alters file content.
        """
        path = self.resolve(relpath)
        if not path.is_file():
            raise NotFound(relpath)
        if not hasattr(os, "posix_fadvise"):
            return False
        try:
            fd = os.open(path, os.O_RDONLY)
            try:
                os.posix_fadvise(fd, 0, 0, os.POSIX_FADV_DONTNEED)
            finally:
                os.close(fd)
            return True
        except OSError:
            return False

    def _apply_latency(self) -> None:
        if self.latency > 0:
            time.sleep(self.latency)


class TierReader:
    """File-like chunked reader that charges the tier's counters and throttle."""

    def __init__(self, tier: StorageTier, relpath: str, path: Path):
        self._tier = tier
        self._relpath = relpath
        try:
            self._f = open(path, "rb")
        except OSError as e:
            raise IoError(relpath, f"open failed on {relpath}: {e}") from e

    def read(self, n: int = CHUNK_SIZE) -> bytes:
        try:
            chunk = self._f.read(n)
        except OSError as e:
            raise IoError(self._relpath, f"read failed on {self._relpath}: {e}") from e
        if chunk:
            if self._tier._pacer:
                self._tier._pacer.wait(len(chunk))
            self._tier._count_read(len(chunk))
        return chunk

    def close(self) -> None:
        self._f.close()
        if self._tier._pacer:
            self._tier._pacer.flush()

    def __enter__(self) -> "TierReader":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class TierWriter:
    """File-like chunked writer: quota check up front, pacing and counting per chunk."""

    def __init__(self, tier: StorageTier, relpath: str, path: Path, old_size: int):
        self._tier = tier
        self._relpath = relpath
        self._path = path
        self._old_size = old_size
        self._written = 0
        self._closed = False
        try:
            self._f = open(path, "wb")
        except OSError as e:
            self._release()
            raise IoError(relpath, f"open failed on {relpath}: {e}") from e

    def write(self, data: bytes) -> None:
        tier = self._tier
        if tier.capacity is not None:
            with tier._lock:
                projected = tier._used_bytes - self._old_size + self._written + len(data)
                if projected > tier.capacity:
                    raise QuotaExceeded(
                        self._relpath,
                        f"write of {len(data)} bytes to {self._relpath} exceeds "
                        f"capacity {tier.capacity}",
                    )
        try:
            self._f.write(data)
        except OSError as e:
            raise IoError(self._relpath, f"write failed on {self._relpath}: {e}") from e
        if tier._pacer:
            tier._pacer.wait(len(data))
        tier._count_write(len(data))
        self._written += len(data)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._f.close()
            if self._tier._pacer:
                self._tier._pacer.flush()
        finally:
            self._release(dirty=True)

    def _release(self, dirty: bool = False) -> None:
        tier = self._tier
        with tier._write_cv:
            if dirty:
                tier._used_bytes += self._written - self._old_size
                tier._dirty.add(self._path)
            tier._inflight_writes -= 1
            tier._write_cv.notify_all()

    def __enter__(self) -> "TierWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# -- module-level operation aliases -------------------------------------------


def read_file(tier: StorageTier, relpath: str) -> bytes:
    return tier.read_file(relpath)


def write_file(tier: StorageTier, relpath: str, data: bytes) -> None:
    tier.write_file(relpath, data)


def sync_tier(tier: StorageTier) -> None:
    tier.sync()


def advise_dont_need(tier: StorageTier, relpath: str) -> bool:
    return tier.advise_dont_need(relpath)


def snapshot_counters(tier: StorageTier) -> tuple[int, int]:
    return tier.snapshot_counters()


# -- tier configuration file ---------------------------------------------------


def load_tiers(config_path: str | os.PathLike) -> dict[str, StorageTier]:
    """Parse a tier configuration file into a label -> StorageTier map.

    Line format (tab-separated):
        label<TAB>root<TAB>throttle_bytes_per_sec|none<TAB>capacity_bytes|none

    An optional fifth column gives a per-operation latency in seconds
    (``none`` or absent means zero). Blank lines and lines starting with
    ``#`` are ignored.
    """
    tiers: dict[str, StorageTier] = {}
    try:
        text = Path(config_path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(str(config_path), f"cannot read tier config: {e}") from e
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (4, 5):
            raise InvalidArgument(
                f"{config_path}:{lineno}: expected 4 or 5 tab-separated fields, "
                f"got {len(fields)}"
            )
        label, root, throttle_s, capacity_s = fields[:4]
        latency_s = fields[4] if len(fields) == 5 else "none"
        if label in tiers:
            raise InvalidArgument(f"{config_path}:{lineno}: duplicate tier label {label!r}")
        throttle = None if throttle_s.lower() == "none" else float(throttle_s)
        capacity = None if capacity_s.lower() == "none" else int(capacity_s)
        latency = 0.0 if latency_s.lower() == "none" else float(latency_s)
        tiers[label] = StorageTier(label, root, throttle=throttle, capacity=capacity, latency=latency)
    return tiers
