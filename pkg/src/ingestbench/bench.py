"""Benchmark runners: ingestion scaling, compute/I-O overlap, checkpoint stalls.

Five experiments are provided:

  ingest      source -> shuffle -> parallel map(read+decode+resize) ->
              ignore-errors -> batch, driven by a bare iterator loop.
  ingest-raw  same pipeline with a read-only map function, isolating
              preprocessing cost.
  miniapp     the ingest pipeline plus one-hot labels and prefetch, feeding a
              synthetic per-batch training step.
  ckpt        the miniapp loop with periodic checkpointing, direct to a tier
              or staged through a burst buffer; reports caller stall times.
  rawio       sequential write-then-read probe of one tier in 1 MiB blocks.

Every experiment runs under the same protocol: N repetitions, the first one
is warm-up and is discarded, medians are computed over the rest.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt_mod
from .errors import InvalidArgument, NotFound
from .fsio import CHUNK_SIZE, StorageTier
from .pipeline import Dataset, Element, END_OF_EPOCH
from .trace import TraceSeries, start_trace, stop_trace, write_trace_csv
from .workload import (
    ConsumerCost,
    Tensor,
    consumer_step,
    decode_imgbin,
    load_manifest,
    one_hot,
    resize_bilinear,
)

EXPERIMENTS = ("ingest", "ingest-raw", "miniapp", "ckpt", "rawio")

DEFAULT_RAWIO_BYTES = 512 * 1024 * 1024
DEFAULT_STORE_BYTES = 64 * 1024 * 1024


@dataclass
class BenchConfig:
    """One experiment's parameters; tier names refer to a loaded tier map."""

    experiment: str
    data_tier: str | None = None
    fast_tier: str | None = None
    slow_tier: str | None = None
    threads: int = 1
    batch_size: int = 64
    prefetch_depth: int = 0
    iterations: int = 0  # 0 = consume the whole corpus
    consumer_cost_ms: float = 0.0
    consumer_kernel_passes: int = 0
    ckpt_every: int = 20
    ckpt_mode: str = "direct"
    keep_last: int = 5
    size_bytes: int | None = None
    repetitions: int = 6
    seed: int = 0
    shuffle_buffer: int = 0  # 0 = whole corpus
    resize_w: int = 224
    resize_h: int = 224
    num_classes: int | None = None
    drop_remainder: bool = False
    cache_advice: bool = True
    csv_out: str | None = None
    plot_out: str | None = None
    trace_out: str | None = None
    trace_interval_s: float = 1.0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidArgument(f"unknown experiment {self.experiment!r}")
        if self.threads < 1:
            raise InvalidArgument("threads must be >= 1")
        if self.repetitions < 2:
            raise InvalidArgument("repetitions must be >= 2 (one warm-up plus measurements)")
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if self.ckpt_mode not in ("direct", "burst"):
            raise InvalidArgument(f"ckpt_mode must be direct or burst, got {self.ckpt_mode!r}")


@dataclass
class RepStats:
    """Raw measurements from one repetition."""

    rep: int
    wall_s: float = 0.0
    images: int = 0
    batches: int = 0
    bytes_read: int = 0
    bytes_written: int = 0
    dropped: int = 0
    checkpoints: int = 0
    stalls: list[float] = field(default_factory=list)
    save_times: list[float] = field(default_factory=list)  # monotonic, save begin
    drain_join_s: float = 0.0
    read_bw: float = 0.0  # bytes/s, rawio only
    write_bw: float = 0.0
    step_checksums: list[int] = field(default_factory=list)

    @property
    def stall_s_total(self) -> float:
        return sum(self.stalls)

    @property
    def images_per_s(self) -> float:
        return self.images / self.wall_s if self.wall_s > 0 else 0.0

    @property
    def mb_per_s(self) -> float:
        return self.bytes_read / 1e6 / self.wall_s if self.wall_s > 0 else 0.0


@dataclass
class RunResult:
    """Config echo, per-repetition stats, and medians over the measured reps."""

    experiment: str
    threads: int
    batch_size: int
    prefetch_depth: int
    seed: int
    reps: list[RepStats] = field(default_factory=list)
    trace: TraceSeries | None = None

    @property
    def measured(self) -> list[RepStats]:
        """All repetitions except the warm-up (repetition 0)."""
        return self.reps[1:]

    def _median(self, getter) -> float:
        vals = [getter(r) for r in self.measured]
        return statistics.median(vals) if vals else 0.0

    @property
    def median_wall_s(self) -> float:
        return self._median(lambda r: r.wall_s)

    @property
    def median_images_per_s(self) -> float:
        return self._median(lambda r: r.images_per_s)

    @property
    def median_mb_per_s(self) -> float:
        return self._median(lambda r: r.mb_per_s)

    @property
    def median_stall_s(self) -> float:
        return self._median(lambda r: r.stall_s_total)

    @property
    def median_read_bw(self) -> float:
        return self._median(lambda r: r.read_bw)

    @property
    def median_write_bw(self) -> float:
        return self._median(lambda r: r.write_bw)


def run_protocol(single_run, repetitions: int, cfg: BenchConfig | None = None) -> RunResult:
    """Run *single_run(rep_index)* `repetitions` times; repetition 0 is warm-up.

    The returned result carries every raw repetition; the median properties
    exclude repetition 0.
    """
    if repetitions < 2:
        raise InvalidArgument("repetitions must be >= 2")
    result = RunResult(
        experiment=cfg.experiment if cfg else "custom",
        threads=cfg.threads if cfg else 1,
        batch_size=cfg.batch_size if cfg else 0,
        prefetch_depth=cfg.prefetch_depth if cfg else 0,
        seed=cfg.seed if cfg else 0,
    )
    for rep in range(repetitions):
        stats = single_run(rep)
        if not isinstance(stats, RepStats):
            stats = RepStats(rep=rep, wall_s=float(stats))
        stats.rep = rep
        result.reps.append(stats)
    return result


# -- pipeline assembly ------------------------------------------------------------


def _preprocess_fn(tier: StorageTier, out_w: int, out_h: int, num_classes: int | None):
    def fn(elem: Element) -> Element:
        blob = tier.read_file(elem.payload)
        rec = decode_imgbin(blob)
        tensor = resize_bilinear(rec, out_w, out_h)
        label = elem.label
        if num_classes is not None:
            label = one_hot(int(elem.label), num_classes)
        return Element(tensor, label, elem.seq_id)

    return fn


def _read_only_fn(tier: StorageTier):
    def fn(elem: Element) -> Element:
        return Element(tier.read_file(elem.payload), elem.label, elem.seq_id)

    return fn


def build_dataset(cfg: BenchConfig, manifest: list[tuple[str, int]], map_fn) -> Dataset:
    """Assemble source -> shuffle -> map -> ignore-errors -> batch [-> prefetch]."""
    ds = Dataset.from_slices(manifest)
    buffer_size = cfg.shuffle_buffer or max(len(manifest), 1)
    ds = ds.shuffle(buffer_size, cfg.seed)
    ds = ds.map_parallel(map_fn, cfg.threads)
    ds = ds.ignore_errors()
    ds = ds.batch(cfg.batch_size, cfg.drop_remainder)
    if cfg.prefetch_depth > 0:
        ds = ds.prefetch(cfg.prefetch_depth)
    return ds


def _advise_corpus(tier: StorageTier, manifest: list[tuple[str, int]]) -> None:
    for relpath, _ in manifest:
        try:
            tier.advise_dont_need(relpath)
        except NotFound:
            pass


def _resolve_tier(tiers: dict[str, StorageTier], label: str | None, role: str) -> StorageTier:
    if label is None:
        raise InvalidArgument(f"experiment requires a {role} tier")
    if label not in tiers:
        raise InvalidArgument(f"unknown {role} tier {label!r}")
    return tiers[label]


# -- experiments -------------------------------------------------------------------


def run_ingest(cfg: BenchConfig, tiers: dict[str, StorageTier]) -> RunResult:
    """Ingestion-rate benchmark with the full read+decode+resize map."""
    tier = _resolve_tier(tiers, cfg.data_tier, "data")
    map_fn = _preprocess_fn(tier, cfg.resize_w, cfg.resize_h, None)
    return _run_ingest_like(cfg, tier, map_fn)


def run_ingest_raw(cfg: BenchConfig, tiers: dict[str, StorageTier]) -> RunResult:
    """Ingestion-rate benchmark with a read-only map (no decode, no resize)."""
    tier = _resolve_tier(tiers, cfg.data_tier, "data")
    return _run_ingest_like(cfg, tier, _read_only_fn(tier))


def _run_ingest_like(cfg: BenchConfig, tier: StorageTier, map_fn) -> RunResult:
    manifest = load_manifest(tier)

    def single_run(rep: int) -> RepStats:
        if cfg.cache_advice:
            _advise_corpus(tier, manifest)
        ds = build_dataset(cfg, manifest, map_fn)
        r0, w0 = tier.snapshot_counters()
        images = batches = 0
        start = end = time.monotonic()
        try:
            while True:
                item = ds.next()
                if item is END_OF_EPOCH:
                    break
                batches += 1
                images += len(item)
                end = time.monotonic()
                if cfg.iterations and batches >= cfg.iterations:
                    break
        finally:
            ds.close()
        r1, w1 = tier.snapshot_counters()
        return RepStats(
            rep=rep,
            wall_s=end - start,
            images=images,
            batches=batches,
            bytes_read=r1 - r0,
            bytes_written=w1 - w0,
            dropped=ds.stats.dropped,
        )

    return _with_trace(cfg, [tier], single_run)


def run_miniapp(cfg: BenchConfig, tiers: dict[str, StorageTier]) -> RunResult:
    """One training epoch: pipeline batches feed the synthetic consumer step."""
    tier = _resolve_tier(tiers, cfg.data_tier, "data")
    manifest = load_manifest(tier)
    num_classes = cfg.num_classes
    if num_classes is None:
        num_classes = max((c for _, c in manifest), default=0) + 1
    map_fn = _preprocess_fn(tier, cfg.resize_w, cfg.resize_h, num_classes)
    cost = ConsumerCost(cfg.consumer_cost_ms / 1000.0, cfg.consumer_kernel_passes)

    def single_run(rep: int) -> RepStats:
        if cfg.cache_advice:
            _advise_corpus(tier, manifest)
        ds = build_dataset(cfg, manifest, map_fn)
        r0, w0 = tier.snapshot_counters()
        stats = RepStats(rep=rep)
        start = end = time.monotonic()
        try:
            while True:
                item = ds.next()
                if item is END_OF_EPOCH:
                    break
                step = consumer_step(item, cost)
                stats.step_checksums.append(step.checksum)
                stats.batches += 1
                stats.images += len(item)
                end = time.monotonic()
                if cfg.iterations and stats.batches >= cfg.iterations:
                    break
        finally:
            ds.close()
        r1, w1 = tier.snapshot_counters()
        stats.wall_s = end - start
        stats.bytes_read = r1 - r0
        stats.bytes_written = w1 - w0
        stats.dropped = ds.stats.dropped
        return stats

    return _with_trace(cfg, [tier], single_run)


def run_ckpt(cfg: BenchConfig, tiers: dict[str, StorageTier]) -> RunResult:
    """Training loop with periodic checkpoints; reports per-checkpoint stalls.

    direct mode saves straight onto the slow tier; burst mode stages on the
    fast tier and drains to the slow tier in the background. All drain tickets
    are joined before the repetition is reported.
    """
    data = _resolve_tier(tiers, cfg.data_tier, "data")
    slow = _resolve_tier(tiers, cfg.slow_tier, "slow")
    fast = _resolve_tier(tiers, cfg.fast_tier, "fast") if cfg.ckpt_mode == "burst" else None
    manifest = load_manifest(data)
    num_classes = cfg.num_classes
    if num_classes is None:
        num_classes = max((c for _, c in manifest), default=0) + 1
    map_fn = _preprocess_fn(data, cfg.resize_w, cfg.resize_h, num_classes)
    cost = ConsumerCost(cfg.consumer_cost_ms / 1000.0, cfg.consumer_kernel_passes)
    iterations = cfg.iterations or 100
    store = synthetic_store(cfg.size_bytes or DEFAULT_STORE_BYTES, cfg.seed)

    def single_run(rep: int) -> RepStats:
        saver = ckpt_mod.SaverConfig(
            prefix=f"ck/rep{rep}/model", keep_last=cfg.keep_last,
            interval_steps=cfg.ckpt_every,
        )
        bb = ckpt_mod.BurstBuffer(fast, slow) if fast is not None else None
        tickets: list[ckpt_mod.DrainTicket] = []
        stats = RepStats(rep=rep)
        ds = build_dataset(cfg, manifest, map_fn)
        start = time.monotonic()
        try:
            for step_no in range(1, iterations + 1):
                item = ds.next()
                if item is END_OF_EPOCH:
                    ds.close()
                    ds = build_dataset(cfg, manifest, map_fn)
                    item = ds.next()
                    if item is END_OF_EPOCH:
                        break
                step = consumer_step(item, cost)
                stats.step_checksums.append(step.checksum)
                stats.batches += 1
                stats.images += len(item)
                if cfg.ckpt_every and step_no % cfg.ckpt_every == 0:
                    t0 = time.monotonic()
                    if bb is not None:
                        _, ticket = bb.save(store, saver, step_no)
                        tickets.append(ticket)
                    else:
                        ckpt_mod.save(store, slow, saver, step_no)
                    stats.stalls.append(time.monotonic() - t0)
                    stats.save_times.append(t0)
                    stats.checkpoints += 1
            stats.wall_s = time.monotonic() - start
        finally:
            ds.close()
        join0 = time.monotonic()
        for ticket in tickets:
            ckpt_mod.drain_wait(ticket)
        if bb is not None:
            bb.close()
        stats.drain_join_s = time.monotonic() - join0
        return stats

    traced = [data, slow] + ([fast] if fast is not None else [])
    return _with_trace(cfg, traced, single_run)


def run_rawio(cfg: BenchConfig, tiers: dict[str, StorageTier]) -> RunResult:
    """Sequential write-then-read bandwidth probe in 1 MiB blocks."""
    tier = _resolve_tier(tiers, cfg.data_tier, "data")
    size = cfg.size_bytes or DEFAULT_RAWIO_BYTES
    block = np.random.default_rng(cfg.seed).integers(
        0, 256, size=CHUNK_SIZE, dtype=np.uint8
    ).tobytes()
    relpath = "rawio-probe.bin"

    def single_run(rep: int) -> RepStats:
        stats = RepStats(rep=rep)
        t0 = time.monotonic()
        with tier.open_writer(relpath) as w:
            remaining = size
            while remaining > 0:
                n = min(remaining, CHUNK_SIZE)
                w.write(block[:n])
                remaining -= n
        t_written = time.monotonic()
        tier.sync()
        t1 = time.monotonic()
        tier.advise_dont_need(relpath)
        t2 = time.monotonic()
        with tier.open_reader(relpath) as r:
            while r.read(CHUNK_SIZE):
                pass
        t3 = time.monotonic()
        # On a throttled tier the pacing schedule is the device's transfer
        # time; the sync barrier's host-side fsync would double-count it.
        # On a real (unthrottled) device the fsync is the device time.
        write_end = t_written if tier.throttle else t1
        stats.write_bw = size / (write_end - t0) if write_end > t0 else 0.0
        stats.read_bw = size / (t3 - t2) if t3 > t2 else 0.0
        stats.wall_s = t3 - t0
        stats.bytes_read = size
        stats.bytes_written = size
        return stats

    try:
        return _with_trace(cfg, [tier], single_run)
    finally:
        if tier.exists(relpath):
            tier.delete_file(relpath)


_RUNNERS = {
    "ingest": run_ingest,
    "ingest-raw": run_ingest_raw,
    "miniapp": run_miniapp,
    "ckpt": run_ckpt,
    "rawio": run_rawio,
}


def run_experiment(cfg: BenchConfig, tiers: dict[str, StorageTier]) -> RunResult:
    return _RUNNERS[cfg.experiment](cfg, tiers)


def _with_trace(cfg: BenchConfig, traced_tiers: list[StorageTier], single_run) -> RunResult:
    """Run the protocol, optionally sampling tier counters across all repetitions."""
    unique = list(dict.fromkeys(traced_tiers))
    handle = start_trace(unique, cfg.trace_interval_s) if cfg.trace_out else None
    try:
        result = run_protocol(single_run, cfg.repetitions, cfg)
    finally:
        if handle is not None:
            series = stop_trace(handle)
            write_trace_csv(series, cfg.trace_out)
    if handle is not None:
        result.trace = series
    return result


# -- synthetic model state -----------------------------------------------------------


def synthetic_store(total_bytes: int, seed: int,
                    var_bytes: int = 8 * 1024 * 1024) -> ckpt_mod.VariableStore:
    """Deterministic f32 variable store of approximately *total_bytes*."""
    rng = np.random.default_rng(seed)
    store = ckpt_mod.VariableStore()
    remaining = max(total_bytes, 4)
    i = 0
    while remaining > 0:
        n_bytes = min(var_bytes, remaining)
        count = max(n_bytes // 4, 1)
        values = rng.standard_normal(count).astype(np.float32)
        store.add(f"layer_{i:03d}", Tensor((count,), "f32", values))
        remaining -= count * 4
        i += 1
    return store


# -- result emission -----------------------------------------------------------------


CSV_HEADER = "experiment,threads,batch_size,prefetch,rep,wall_s,images_per_s,mb_per_s,stall_s_total,dropped"


def emit_results(results: RunResult | list[RunResult], csv_out: str | None,
                 plot_out: str | None = None) -> None:
    """Write the results CSV (per-rep rows plus a median row per result).

    For rawio results the mb_per_s column carries read bandwidth and a second
    row group (experiment suffixed ``-write``) carries write bandwidth.
    With *plot_out*, a gnuplot script drawing the medians as bars is emitted.
    """
    if isinstance(results, RunResult):
        results = [results]
    rows = []
    for res in results:
        rows.extend(_result_rows(res))
    if csv_out:
        with open(csv_out, "w") as f:
            f.write(CSV_HEADER + "\n")
            for row in rows:
                f.write(",".join(str(v) for v in row) + "\n")
    if plot_out:
        _write_gnuplot(results, plot_out)


def _result_rows(res: RunResult) -> list[list]:
    rows = []

    def fmt(v: float) -> str:
        return f"{v:.6f}"

    for r in res.reps:
        mb = r.read_bw / 1e6 if res.experiment == "rawio" else r.mb_per_s
        rows.append([res.experiment, res.threads, res.batch_size, res.prefetch_depth,
                     r.rep, fmt(r.wall_s), fmt(r.images_per_s), fmt(mb),
                     fmt(r.stall_s_total), r.dropped])
    mb_median = res.median_read_bw / 1e6 if res.experiment == "rawio" else res.median_mb_per_s
    rows.append([res.experiment, res.threads, res.batch_size, res.prefetch_depth,
                 "median", fmt(res.median_wall_s), fmt(res.median_images_per_s),
                 fmt(mb_median), fmt(res.median_stall_s),
                 max((r.dropped for r in res.measured), default=0)])
    if res.experiment == "rawio":
        for r in res.reps:
            rows.append([res.experiment + "-write", res.threads, res.batch_size,
                         res.prefetch_depth, r.rep, fmt(r.wall_s), fmt(0.0),
                         fmt(r.write_bw / 1e6), fmt(0.0), 0])
        rows.append([res.experiment + "-write", res.threads, res.batch_size,
                     res.prefetch_depth, "median", fmt(res.median_wall_s), fmt(0.0),
                     fmt(res.median_write_bw / 1e6), fmt(0.0), 0])
    return rows


def _write_gnuplot(results: list[RunResult], plot_out: str) -> None:
    metric = "wall_s" if results[0].experiment in ("miniapp", "ckpt") else "images_per_s"
    lines = [
        "set style data histogram",
        "set style fill solid 0.8 border -1",
        "set boxwidth 0.8",
        f"set ylabel '{metric} (median)'",
        "set xlabel 'configuration'",
        "$data << EOD",
    ]
    for res in results:
        label = f"{res.experiment}-t{res.threads}-b{res.batch_size}-p{res.prefetch_depth}"
        value = res.median_wall_s if metric == "wall_s" else res.median_images_per_s
        lines.append(f"{label} {value:.6f}")
    lines += ["EOD", "plot $data using 2:xtic(1) title 'median'", ""]
    with open(plot_out, "w") as f:
        f.write("\n".join(lines))


# -- built-in self check ----------------------------------------------------------------


def selfcheck(verbose: bool = True) -> bool:
    """Fast invariant checks suitable for CI gating (exit code 4 on failure)."""
    checks: list[tuple[str, bool]] = []

    ds = Dataset.from_slices([(i, i) for i in range(16384)]).batch(64)
    n_batches = sum(1 for _ in ds)
    checks.append(("16384 items / batch 64 -> 256 batches", n_batches == 256))

    ds = Dataset.from_slices([(i, i) for i in range(9144)]).batch(64, drop_remainder=True)
    batches = list(ds)
    checks.append(("9144 items / batch 64 drop-remainder -> 142 batches",
                   len(batches) == 142))
    checks.append(("142 batches carry 9088 items",
                   sum(len(b) for b in batches) == 9088))

    saves = sum(1 for s in range(1, 101) if s % 20 == 0)
    checks.append(("100 steps / checkpoint every 20 -> 5 checkpoints", saves == 5))

    result = run_protocol(lambda rep: [5.0, 3.0, 4.0, 6.0, 2.0, 7.0][rep], 6)
    checks.append(("protocol median excludes warm-up", result.median_wall_s == 4.0))

    ok = all(passed for _, passed in checks)
    if verbose:
        for name, passed in checks:
            print(f"[{'PASS' if passed else 'FAIL'}] {name}")
    return ok
