"""Data-ingestion pipeline library with tiered checkpointing and benchmark CLI."""

from .errors import (
    CorruptCheckpoint,
    DecodeError,
    ElementError,
    IncompleteCheckpoint,
    IngestBenchError,
    InvalidArgument,
    IoError,
    NotFound,
    QuotaExceeded,
)
from .fsio import StorageTier, load_tiers
from .pipeline import Batch, Dataset, Element, END_OF_EPOCH, from_slices
from .workload import (
    ConsumerCost,
    CorpusSpec,
    ImageRecord,
    StepStats,
    Tensor,
    consumer_step,
    decode_imgbin,
    encode_imgbin,
    generate_corpus,
    load_manifest,
    one_hot,
    resize_bilinear,
)
from .checkpoint import (
    BurstBuffer,
    CheckpointSet,
    DrainStatus,
    DrainTicket,
    SaverConfig,
    VariableStore,
    burst_save,
    drain_wait,
    find_checkpoints,
    latest_checkpoint,
    restore,
    save,
)
from .trace import TraceHandle, TraceSample, TraceSeries, start_trace, stop_trace, write_trace_csv
from .bench import BenchConfig, RepStats, RunResult, emit_results, run_experiment, run_protocol

__version__ = "0.1.0"

__all__ = [
    "BenchConfig",
    "Batch",
    "BurstBuffer",
    "CheckpointSet",
    "ConsumerCost",
    "CorpusSpec",
    "CorruptCheckpoint",
    "Dataset",
    "DecodeError",
    "DrainStatus",
    "DrainTicket",
    "Element",
    "ElementError",
    "END_OF_EPOCH",
    "ImageRecord",
    "IncompleteCheckpoint",
    "IngestBenchError",
    "InvalidArgument",
    "IoError",
    "NotFound",
    "QuotaExceeded",
    "RepStats",
    "RunResult",
    "SaverConfig",
    "StepStats",
    "StorageTier",
    "Tensor",
    "TraceHandle",
    "TraceSample",
    "TraceSeries",
    "VariableStore",
    "burst_save",
    "consumer_step",
    "decode_imgbin",
    "drain_wait",
    "emit_results",
    "encode_imgbin",
    "find_checkpoints",
    "from_slices",
    "generate_corpus",
    "latest_checkpoint",
    "load_manifest",
    "load_tiers",
    "one_hot",
    "resize_bilinear",
    "restore",
    "run_experiment",
    "run_protocol",
    "save",
    "start_trace",
    "stop_trace",
    "write_trace_csv",
]
