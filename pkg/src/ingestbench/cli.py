"""Command-line benchmark driver.

    bench <experiment> --tiers-config tiers.tsv --data-tier ssd [options]

Experiments: ingest, ingest-raw, miniapp, ckpt, rawio. Two utility commands
are included: `corpus` generates a synthetic sample corpus onto a tier, and
`selfcheck` runs fast built-in invariant checks.

--threads and --batch-size accept comma-separated sweeps; each combination
runs as its own experiment and lands in the same CSV.

Exit codes: 0 success, 2 configuration error, 3 I/O failure,
4 self-check failure.
"""

from __future__ import annotations

import argparse
import sys

from .bench import (
    BenchConfig,
    EXPERIMENTS,
    RunResult,
    emit_results,
    run_experiment,
    selfcheck,
)
from .errors import IngestBenchError, InvalidArgument, IoError, NotFound
from .fsio import load_tiers
from .workload import CorpusSpec, generate_corpus

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SELFCHECK = 4


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _add_experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tiers-config", required=True, help="tier configuration file (TSV)")
    p.add_argument("--data-tier", help="tier label holding the corpus")
    p.add_argument("--fast-tier", help="burst-buffer staging tier (ckpt burst mode)")
    p.add_argument("--slow-tier", help="checkpoint target tier (ckpt experiment)")
    p.add_argument("--threads", type=_int_list, default=[1],
                   help="map parallelism; comma-separated values sweep")
    p.add_argument("--batch-size", type=_int_list, default=[64],
                   help="batch size; comma-separated values sweep")
    p.add_argument("--prefetch", type=int, default=0, help="prefetch depth (0 disables)")
    p.add_argument("--iterations", type=int, default=0,
                   help="batches to consume (0 = full corpus; ckpt default 100)")
    p.add_argument("--consumer-cost-ms", type=float, default=0.0,
                   help="synthetic per-batch compute duration")
    p.add_argument("--kernel-passes", type=int, default=0,
                   help="synthetic per-batch arithmetic passes")
    p.add_argument("--ckpt-every", type=int, default=20)
    p.add_argument("--ckpt-mode", choices=("direct", "burst"), default="direct")
    p.add_argument("--keep-last", type=int, default=5)
    p.add_argument("--size-bytes", type=int, default=None,
                   help="rawio probe size / checkpoint store size")
    p.add_argument("--reps", type=int, default=6,
                   help="repetitions; the first is warm-up and discarded")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shuffle-buffer", type=int, default=0, help="0 = whole corpus")
    p.add_argument("--resize", default="224x224", help="map resize target WxH")
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--drop-remainder", action="store_true")
    p.add_argument("--no-cache-advice", action="store_true",
                   help="skip the pre-run page-cache drop advice")
    p.add_argument("--csv", dest="csv_out", default=None, help="results CSV path")
    p.add_argument("--plot", dest="plot_out", default=None, help="gnuplot script path")
    p.add_argument("--trace", dest="trace_out", default=None, help="activity trace CSV path")
    p.add_argument("--trace-interval", type=float, default=1.0,
                   help="trace sampling interval in seconds (>= 0.1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        _add_experiment_args(p)

    p = sub.add_parser("corpus", help="generate a synthetic corpus onto a tier")
    p.add_argument("--tiers-config", required=True)
    p.add_argument("--data-tier", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--median-bytes", type=int, default=16 * 1024)
    p.add_argument("--spread", type=float, default=1.5)
    p.add_argument("--corrupt-fraction", type=float, default=0.0)
    p.add_argument("--num-classes", type=int, default=102)
    p.add_argument("--seed", type=int, default=0)

    sub.add_parser("selfcheck", help="run built-in invariant checks")
    return parser


def _parse_resize(text: str) -> tuple[int, int]:
    try:
        w, _, h = text.partition("x")
        return int(w), int(h)
    except ValueError as e:
        raise InvalidArgument(f"bad --resize value {text!r}, expected WxH") from e


def _run_benchmarks(args: argparse.Namespace) -> int:
    tiers = load_tiers(args.tiers_config)
    results: list[RunResult] = []
    for threads in args.threads:
        for batch_size in args.batch_size:
            resize_w, resize_h = _parse_resize(args.resize)
            cfg = BenchConfig(
                experiment=args.command,
                data_tier=args.data_tier,
                fast_tier=args.fast_tier,
                slow_tier=args.slow_tier,
                threads=threads,
                batch_size=batch_size,
                prefetch_depth=args.prefetch,
                iterations=args.iterations,
                consumer_cost_ms=args.consumer_cost_ms,
                consumer_kernel_passes=args.kernel_passes,
                ckpt_every=args.ckpt_every,
                ckpt_mode=args.ckpt_mode,
                keep_last=args.keep_last,
                size_bytes=args.size_bytes,
                repetitions=args.reps,
                seed=args.seed,
                shuffle_buffer=args.shuffle_buffer,
                resize_w=resize_w,
                resize_h=resize_h,
                num_classes=args.num_classes,
                drop_remainder=args.drop_remainder,
                cache_advice=not args.no_cache_advice,
                csv_out=args.csv_out,
                plot_out=args.plot_out,
                trace_out=args.trace_out,
                trace_interval_s=args.trace_interval,
            )
            result = run_experiment(cfg, tiers)
            results.append(result)
            _print_summary(result)
    emit_results(results, args.csv_out, args.plot_out)
    return EXIT_OK


def _print_summary(res: RunResult) -> None:
    parts = [
        f"{res.experiment}: threads={res.threads} batch={res.batch_size}"
        f" prefetch={res.prefetch_depth}",
        f"median wall {res.median_wall_s:.3f}s",
        f"{res.median_images_per_s:.1f} images/s",
        f"{res.median_mb_per_s:.2f} MB/s",
    ]
    if res.experiment == "ckpt":
        parts.append(f"stall {res.median_stall_s:.3f}s")
    if res.experiment == "rawio":
        parts.append(f"read {res.median_read_bw / 1e6:.2f} MB/s")
        parts.append(f"write {res.median_write_bw / 1e6:.2f} MB/s")
    dropped = max((r.dropped for r in res.measured), default=0)
    if dropped:
        parts.append(f"dropped {dropped}")
    print("  ".join(parts))


def _run_corpus(args: argparse.Namespace) -> int:
    tiers = load_tiers(args.tiers_config)
    if args.data_tier not in tiers:
        raise InvalidArgument(f"unknown data tier {args.data_tier!r}")
    spec = CorpusSpec(
        count=args.count,
        size_median_bytes=args.median_bytes,
        size_spread=args.spread,
        corrupt_fraction=args.corrupt_fraction,
        seed=args.seed,
        num_classes=args.num_classes,
    )
    manifest = generate_corpus(tiers[args.data_tier], spec)
    print(f"wrote {len(manifest.entries)} files "
          f"({len(manifest.corrupted)} corrupted) to tier {args.data_tier!r}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "selfcheck":
            return EXIT_OK if selfcheck() else EXIT_SELFCHECK
        if args.command == "corpus":
            return _run_corpus(args)
        return _run_benchmarks(args)
    except InvalidArgument as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotFound, IoError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except IngestBenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
