"""Per-tier I/O activity sampler.

Periodically snapshots each tier's byte counters from a dedicated worker and
records per-tick deltas, like a per-device throughput monitor but scoped to
exactly the traffic issued through the adapters. Deltas are conserved: they
sum to the end-minus-start counter snapshot, byte-exact.
"""

from __future__ import annotations

import csv
import threading
import time
from dataclasses import dataclass, field

from .errors import InvalidArgument, IoError
from .fsio import StorageTier

DEFAULT_INTERVAL_S = 1.0
MIN_INTERVAL_S = 0.1


@dataclass
class TraceSample:
    """Byte deltas for one tick, per tier, in trace order."""

    t: int
    reads: tuple[int, ...]
    writes: tuple[int, ...]


@dataclass
class TraceSeries:
    """A finished trace: labels, tick interval, absolute start, samples."""

    labels: list[str]
    interval_s: float
    start_monotonic: float
    initial: list[tuple[int, int]]
    final: list[tuple[int, int]] = field(default_factory=list)
    samples: list[TraceSample] = field(default_factory=list)


class TraceHandle:
    """Active sampler over a fixed tier list; stop() returns the series."""

    def __init__(self, tiers: list[StorageTier], interval_s: float):
        if not tiers:
            raise InvalidArgument("trace needs at least one tier")
        if interval_s < MIN_INTERVAL_S:
            raise InvalidArgument(f"interval must be >= {MIN_INTERVAL_S}s, got {interval_s}")
        self._tiers = list(tiers)
        self._stop = threading.Event()
        self._series: TraceSeries | None = None
        start = time.monotonic()
        self.series_pending = TraceSeries(
            labels=[t.label for t in self._tiers],
            interval_s=interval_s,
            start_monotonic=start,
            initial=[t.snapshot_counters() for t in self._tiers],
        )
        self._worker = threading.Thread(target=self._run, name="trace-sampler", daemon=True)
        self._worker.start()

    def _run(self) -> None:
        series = self.series_pending
        prev = series.initial
        tick = 0
        while True:
            deadline = series.start_monotonic + (tick + 1) * series.interval_s
            timeout = max(0.0, deadline - time.monotonic())
            stopped = self._stop.wait(timeout)
            cur = [t.snapshot_counters() for t in self._tiers]
            series.samples.append(_delta_sample(tick, prev, cur))
            prev = cur
            tick += 1
            if stopped:
                series.final = cur
                return

    def stop(self) -> TraceSeries:
        """Stop sampling, flush the partial tick, return the series (idempotent)."""
        if self._series is None:
            self._stop.set()
            self._worker.join()
            self._series = self.series_pending
        return self._series


def _delta_sample(tick: int, prev, cur) -> TraceSample:
    reads = tuple(c[0] - p[0] for p, c in zip(prev, cur))
    writes = tuple(c[1] - p[1] for p, c in zip(prev, cur))
    return TraceSample(tick, reads, writes)


def start_trace(tiers: list[StorageTier], interval_s: float = DEFAULT_INTERVAL_S) -> TraceHandle:
    return TraceHandle(tiers, interval_s)


def stop_trace(handle: TraceHandle) -> TraceSeries:
    return handle.stop()


def write_trace_csv(series: TraceSeries, out_path: str) -> None:
    """Write `t,<label>_read,<label>_write,...` rows, bytes as decimal integers."""
    header = ["t"]
    for label in series.labels:
        header += [f"{label}_read", f"{label}_write"]
    try:
        with open(out_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for s in series.samples:
                row = [s.t]
                for r, wr in zip(s.reads, s.writes):
                    row += [r, wr]
                w.writerow(row)
    except OSError as e:
        raise IoError(out_path, f"cannot write trace CSV: {e}") from e
