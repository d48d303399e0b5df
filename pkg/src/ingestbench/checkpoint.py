"""Checkpoint save/restore and burst-buffer staging.

A checkpoint is a three-file set derived from one prefix and step:

    <prefix>-<step>.meta    variable names, dtypes, shapes (one per line)
    <prefix>-<step>.index   per-variable offset, length, crc32 into .data
    <prefix>-<step>.data    raw little-endian values, concatenated in store order

The layout is deliberately transparent: text meta/index plus a flat binary
blob, so sets are diffable and fault injection in tests is exact. Saves are
synchronous and durable (tier sync before returning); a keep-newest-N
retention pass runs after each save.

The burst buffer stages checkpoints on a fast tier and drains copies to a
slow tier from a single background worker, so the caller is blocked only for
the fast-tier save.
"""

from __future__ import annotations

import queue
import threading
import time
import zlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import CorruptCheckpoint, IncompleteCheckpoint, InvalidArgument
from .fsio import CHUNK_SIZE, StorageTier
from .workload import Tensor

LATEST_POINTER_NAME = "CHECKPOINT_LATEST"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


class VariableStore:
    """Ordered map of variable name to Tensor; iteration order fixes the .data layout."""

    def __init__(self, variables: dict[str, Tensor] | None = None):
        self._vars: dict[str, Tensor] = {}
        if variables:
            for name, tensor in variables.items():
                self.add(name, tensor)

    def add(self, name: str, tensor: Tensor) -> None:
        if not name:
            raise InvalidArgument("variable name must be non-empty")
        if name in self._vars:
            raise InvalidArgument(f"duplicate variable name {name!r}")
        self._vars[name] = tensor

    def items(self):
        return self._vars.items()

    def names(self) -> list[str]:
        return list(self._vars)

    def __getitem__(self, name: str) -> Tensor:
        return self._vars[name]

    def __len__(self) -> int:
        return len(self._vars)

    def __eq__(self, other) -> bool:
        if not isinstance(other, VariableStore):
            return NotImplemented
        return list(self.items()) == list(other.items())

    @property
    def total_bytes(self) -> int:
        return sum(t.nbytes for t in self._vars.values())


@dataclass(frozen=True)
class CheckpointSet:
    """The file triple for one saved step."""

    prefix: str
    step: int

    @property
    def base(self) -> str:
        return f"{self.prefix}-{self.step}"

    @property
    def meta_path(self) -> str:
        return self.base + ".meta"

    @property
    def index_path(self) -> str:
        return self.base + ".index"

    @property
    def data_path(self) -> str:
        return self.base + ".data"

    @property
    def files(self) -> tuple[str, str, str]:
        return (self.meta_path, self.index_path, self.data_path)


@dataclass
class SaverConfig:
    prefix: str
    keep_last: int = 5
    interval_steps: int = 1

    def __post_init__(self):
        if self.keep_last < 1:
            raise InvalidArgument("keep_last must be >= 1")
        if self.interval_steps < 1:
            raise InvalidArgument("interval_steps must be >= 1")


def save(store: VariableStore, tier: StorageTier, cfg: SaverConfig, step: int) -> CheckpointSet:
    """Write the three-file set, make it durable, then apply retention."""
    if len(store) == 0:
        raise InvalidArgument("cannot save an empty variable store")
    ckpt = CheckpointSet(cfg.prefix, step)

    meta_lines = []
    index_lines = []
    offset = 0
    with tier.open_writer(ckpt.data_path) as w:
        for name, tensor in store.items():
            raw = tensor.to_bytes()
            view = memoryview(raw)
            for pos in range(0, len(raw), CHUNK_SIZE):
                w.write(view[pos : pos + CHUNK_SIZE])
            dims = ",".join(str(d) for d in tensor.dims)
            meta_lines.append(f"{name}\t{tensor.dtype}\t{dims}\n")
            index_lines.append(f"{name}\t{offset}\t{len(raw)}\t{zlib.crc32(raw):08x}\n")
            offset += len(raw)
    tier.write_file(ckpt.index_path, "".join(index_lines).encode("utf-8"))
    tier.write_file(ckpt.meta_path, "".join(meta_lines).encode("utf-8"))
    tier.sync()

    _apply_retention(tier, cfg)
    _update_latest_pointer(tier, ckpt)
    return ckpt


def restore(tier: StorageTier, ckpt: CheckpointSet) -> VariableStore:
    """Rebuild the variable store saved as *ckpt*, bit-exact, with full validation."""
    for relpath in ckpt.files:
        if not tier.exists(relpath):
            raise IncompleteCheckpoint(f"missing checkpoint file {relpath}")

    meta = _parse_meta(tier, ckpt)
    index = _parse_index(tier, ckpt)
    if [m[0] for m in meta] != [i[0] for i in index]:
        raise CorruptCheckpoint(f"{ckpt.base}: meta and index variable lists differ")

    data = tier.read_file(ckpt.data_path)
    expected_offset = 0
    store = VariableStore()
    for (name, dtype, dims), (_, offset, length, crc) in zip(meta, index):
        if offset != expected_offset:
            raise CorruptCheckpoint(
                f"{ckpt.base}: index gap or overlap at variable {name!r} "
                f"(offset {offset}, expected {expected_offset})"
            )
        expected_offset = offset + length
        if expected_offset > len(data):
            raise CorruptCheckpoint(f"{ckpt.base}: variable {name!r} extends past data file")
        raw = data[offset : offset + length]
        if zlib.crc32(raw) != crc:
            raise CorruptCheckpoint(f"{ckpt.base}: variable {name!r} failed crc check")
        count = int(np.prod(dims)) if dims else 1
        if length != count * _DTYPES[dtype].itemsize:
            raise CorruptCheckpoint(
                f"{ckpt.base}: variable {name!r} length {length} does not match shape {dims}"
            )
        values = np.frombuffer(raw, dtype=_DTYPES[dtype]).copy()
        store.add(name, Tensor(dims, dtype, values))
    if expected_offset != len(data):
        raise CorruptCheckpoint(
            f"{ckpt.base}: index covers {expected_offset} bytes, data file has {len(data)}"
        )
    return store


def _parse_meta(tier: StorageTier, ckpt: CheckpointSet) -> list[tuple[str, str, tuple[int, ...]]]:
    out = []
    text = tier.read_file(ckpt.meta_path).decode("utf-8")
    for line in text.splitlines():
        if not line:
            continue
        try:
            name, dtype, dims_s = line.split("\t")
        except ValueError as e:
            raise CorruptCheckpoint(f"{ckpt.meta_path}: malformed line {line!r}") from e
        if dtype not in _DTYPES:
            raise CorruptCheckpoint(f"{ckpt.meta_path}: unknown dtype {dtype!r}")
        dims = tuple(int(d) for d in dims_s.split(",")) if dims_s else ()
        out.append((name, dtype, dims))
    return out


def _parse_index(tier: StorageTier, ckpt: CheckpointSet) -> list[tuple[str, int, int, int]]:
    out = []
    text = tier.read_file(ckpt.index_path).decode("utf-8")
    for line in text.splitlines():
        if not line:
            continue
        try:
            name, offset_s, length_s, crc_s = line.split("\t")
            out.append((name, int(offset_s), int(length_s), int(crc_s, 16)))
        except ValueError as e:
            raise CorruptCheckpoint(f"{ckpt.index_path}: malformed line {line!r}") from e
    return out


def find_checkpoints(tier: StorageTier, prefix: str) -> list[CheckpointSet]:
    """Discover checkpoint sets by index-file glob, sorted by step ascending."""
    sets = []
    stem = prefix + "-"
    for relpath in tier.list_files(f"{prefix}-*.index"):
        step_s = relpath[len(stem) : -len(".index")]
        if step_s.isdigit():
            sets.append(CheckpointSet(prefix, int(step_s)))
    return sorted(sets, key=lambda c: c.step)


def latest_checkpoint(tier: StorageTier, prefix: str) -> CheckpointSet | None:
    """Resolve the CHECKPOINT_LATEST pointer, or None if absent."""
    pointer = _pointer_relpath(prefix)
    if not tier.exists(pointer):
        return None
    base = tier.read_file(pointer).decode("utf-8").strip()
    stem, _, step_s = base.rpartition("-")
    if not step_s.isdigit():
        raise CorruptCheckpoint(f"{pointer}: malformed pointer {base!r}")
    return CheckpointSet(stem, int(step_s))


def _pointer_relpath(prefix: str) -> str:
    head, _, _ = prefix.rpartition("/")
    return f"{head}/{LATEST_POINTER_NAME}" if head else LATEST_POINTER_NAME


def _update_latest_pointer(tier: StorageTier, ckpt: CheckpointSet) -> None:
    pointer = _pointer_relpath(ckpt.prefix)
    tmp = pointer + ".tmp"
    tier.write_file(tmp, (ckpt.base + "\n").encode("utf-8"))
    tier.rename(tmp, pointer)


def _apply_retention(tier: StorageTier, cfg: SaverConfig) -> None:
    sets = find_checkpoints(tier, cfg.prefix)
    for old in sets[: max(0, len(sets) - cfg.keep_last)]:
        for relpath in old.files:
            if tier.exists(relpath):
                tier.delete_file(relpath)


# -- burst buffer -------------------------------------------------------------------


class DrainStatus(Enum):
    COMPLETED = "completed"
    FAILED = "failed"
    TIMED_OUT = "timed_out"


@dataclass
class DrainTicket:
    """Handle for one background fast-to-slow checkpoint copy."""

    ckpt: CheckpointSet
    enqueued_at: float
    started_at: float | None = None
    finished_at: float | None = None
    error: Exception | None = None
    _done: threading.Event = field(default_factory=threading.Event, repr=False)

    @property
    def resolved(self) -> bool:
        return self._done.is_set()


def drain_wait(ticket: DrainTicket, timeout: float | None = None) -> DrainStatus:
    """Wait for a drain to finish; never raises, the outcome is the return value."""
    if not ticket._done.wait(timeout):
        return DrainStatus.TIMED_OUT
    return DrainStatus.FAILED if ticket.error is not None else DrainStatus.COMPLETED


class BurstBuffer:
    """Checkpoint stager: synchronous save to the fast tier, queued drain to the slow one.

    A single worker thread copies sets in FIFO order, so drains never
    reorder and at most one copy competes with foreground I/O. Drain
    failures are recorded on the ticket, never raised into the caller.
    """

    def __init__(self, fast_tier: StorageTier, slow_tier: StorageTier,
                 delete_after_drain: bool = True):
        if fast_tier is slow_tier or fast_tier.root == slow_tier.root:
            raise InvalidArgument("fast and slow tiers must be distinct")
        self.fast_tier = fast_tier
        self.slow_tier = slow_tier
        self.delete_after_drain = delete_after_drain
        self._queue: queue.Queue = queue.Queue()
        self._worker = threading.Thread(target=self._drain_loop, name="ckpt-drain", daemon=True)
        self._worker.start()

    def save(self, store: VariableStore, cfg: SaverConfig, step: int
             ) -> tuple[CheckpointSet, DrainTicket]:
        """Save to the fast tier (durable before return) and enqueue the drain."""
        ckpt = save(store, self.fast_tier, cfg, step)
        ticket = DrainTicket(ckpt, enqueued_at=time.monotonic())
        self._queue.put(ticket)
        return ckpt, ticket

    def close(self, timeout: float | None = None) -> None:
        """Finish queued drains and stop the worker."""
        self._queue.put(None)
        self._worker.join(timeout)

    def _drain_loop(self) -> None:
        while True:
            ticket = self._queue.get()
            if ticket is None:
                return
            ticket.started_at = time.monotonic()
            try:
                self._drain_one(ticket.ckpt)
            except Exception as e:  # noqa: BLE001 - failures belong on the ticket
                ticket.error = e
            finally:
                ticket.finished_at = time.monotonic()
                ticket._done.set()

    def _drain_one(self, ckpt: CheckpointSet) -> None:
        data_crc = 0
        data_len = 0
        for relpath in ckpt.files:
            is_data = relpath == ckpt.data_path
            with self.fast_tier.open_reader(relpath) as r, \
                    self.slow_tier.open_writer(relpath) as w:
                while True:
                    chunk = r.read(CHUNK_SIZE)
                    if not chunk:
                        break
                    if is_data:
                        data_crc = zlib.crc32(chunk, data_crc)
                        data_len += len(chunk)
                    w.write(chunk)
        self._verify_copy(ckpt, data_len, data_crc)
        if self.delete_after_drain:
            for relpath in ckpt.files:
                self.fast_tier.delete_file(relpath)

    def _verify_copy(self, ckpt: CheckpointSet, expect_len: int, expect_crc: int) -> None:
        # Read the landed copy directly (outside the adapter) so the check does
        # not pollute tier counters or consume throttle budget.
        path = self.slow_tier.resolve(ckpt.data_path)
        crc = 0
        length = 0
        with open(path, "rb") as f:
            while True:
                chunk = f.read(CHUNK_SIZE)
                if not chunk:
                    break
                crc = zlib.crc32(chunk, crc)
                length += len(chunk)
        if length != expect_len or crc != expect_crc:
            raise CorruptCheckpoint(
                f"drain verification failed for {ckpt.data_path}: "
                f"got {length} bytes crc {crc:08x}, expected {expect_len} bytes "
                f"crc {expect_crc:08x}"
            )


def burst_save(store: VariableStore, bb: BurstBuffer, cfg: SaverConfig, step: int
               ) -> tuple[CheckpointSet, DrainTicket]:
    return bb.save(store, cfg, step)
