"""Synthetic image workload: container format, preprocessing, corpus, consumer.

The on-disk sample format (IMGBIN) is a minimal checksummed raw-pixel
container. It stands in for compressed image formats so that decode failures
can be injected deterministically and no codec dependency is needed; the
pipeline's map stage takes a plain function, so a real decoder can be plugged
in instead.

IMGBIN layout, little-endian:
    magic "IMGB" (4) | u32 width | u32 height | u8 channels
    | payload (width*height*channels bytes, row-major)
    | u32 crc32 of payload
"""

from __future__ import annotations

import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DecodeError, InvalidArgument
from .fsio import StorageTier

IMGBIN_MAGIC = b"IMGB"
IMGBIN_HEADER = struct.Struct("<4sIIB")
MANIFEST_NAME = "manifest.tsv"
CORRUPTED_NAME = "corrupted.tsv"

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


@dataclass
class Tensor:
    """Dense row-major numeric array with an explicit wire dtype."""

    dims: tuple[int, ...]
    dtype: str
    data: np.ndarray

    def __post_init__(self):
        if self.dtype not in _DTYPES:
            raise InvalidArgument(f"unsupported dtype {self.dtype!r}")
        self.data = np.ascontiguousarray(self.data, dtype=_DTYPES[self.dtype]).reshape(-1)
        expected = int(np.prod(self.dims)) if self.dims else 1
        if self.data.size != expected:
            raise InvalidArgument(
                f"data length {self.data.size} does not match dims {self.dims}"
            )
        if not np.all(np.isfinite(self.data)):
            raise InvalidArgument("tensor values must be finite")

    @property
    def nbytes(self) -> int:
        return self.data.size * _DTYPES[self.dtype].itemsize

    def to_bytes(self) -> bytes:
        return self.data.tobytes()

    def reshaped(self) -> np.ndarray:
        return self.data.reshape(self.dims)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.dtype == other.dtype
            and self.to_bytes() == other.to_bytes()
        )


@dataclass
class ImageRecord:
    """Raw 8-bit image: dims, samples, and a checksum over the samples."""

    width: int
    height: int
    channels: int
    pixel_data: bytes
    crc: int = -1

    def __post_init__(self):
        if self.crc == -1:
            self.crc = zlib.crc32(self.pixel_data)

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InvalidArgument(f"bad dims {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise InvalidArgument(f"channels must be 1 or 3, got {self.channels}")
        expected = self.width * self.height * self.channels
        if len(self.pixel_data) != expected:
            raise InvalidArgument(
                f"payload length {len(self.pixel_data)} != {expected} "
                f"for {self.width}x{self.height}x{self.channels}"
            )
        if zlib.crc32(self.pixel_data) != self.crc:
            raise InvalidArgument("crc does not match pixel data")


def encode_imgbin(rec: ImageRecord) -> bytes:
    """Serialize a record to the IMGBIN container."""
    rec.validate()
    header = IMGBIN_HEADER.pack(IMGBIN_MAGIC, rec.width, rec.height, rec.channels)
    return header + rec.pixel_data + struct.pack("<I", rec.crc)


def decode_imgbin(data: bytes) -> ImageRecord:
    """Parse an IMGBIN container, verifying structure and checksum."""
    if len(data) < IMGBIN_HEADER.size:
        raise DecodeError(f"truncated: {len(data)} bytes, header needs {IMGBIN_HEADER.size}")
    magic, width, height, channels = IMGBIN_HEADER.unpack_from(data)
    if magic != IMGBIN_MAGIC:
        raise DecodeError(f"bad magic {magic!r}")
    payload_len = width * height * channels
    expected_total = IMGBIN_HEADER.size + payload_len + 4
    if len(data) != expected_total:
        raise DecodeError(f"truncated: {len(data)} bytes, expected {expected_total}")
    payload = data[IMGBIN_HEADER.size : IMGBIN_HEADER.size + payload_len]
    (crc,) = struct.unpack_from("<I", data, IMGBIN_HEADER.size + payload_len)
    if zlib.crc32(payload) != crc:
        raise DecodeError("crc mismatch")
    return ImageRecord(width, height, channels, payload, crc)


def resize_bilinear(rec: ImageRecord, out_w: int, out_h: int) -> Tensor:
    """Bilinear resize with half-pixel-center sampling.

    Output is an [out_h, out_w, channels] f32 tensor with values in [0, 255].
    A same-size resize reproduces the input exactly (cast to f32).
    """
    if out_w < 1 or out_h < 1:
        raise InvalidArgument(f"output dims must be >= 1, got {out_w}x{out_h}")
    rec.validate()
    src = np.frombuffer(rec.pixel_data, dtype=np.uint8).reshape(
        rec.height, rec.width, rec.channels
    ).astype(np.float32)
    if out_w == rec.width and out_h == rec.height:
        return Tensor((out_h, out_w, rec.channels), "f32", src)

    # Source sample coordinate of each output pixel center.
    ys = (np.arange(out_h, dtype=np.float32) + 0.5) * (rec.height / out_h) - 0.5
    xs = (np.arange(out_w, dtype=np.float32) + 0.5) * (rec.width / out_w) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = (ys - y0).reshape(-1, 1, 1)
    wx = (xs - x0).reshape(1, -1, 1)
    y0c = np.clip(y0, 0, rec.height - 1)
    y1c = np.clip(y0 + 1, 0, rec.height - 1)
    x0c = np.clip(x0, 0, rec.width - 1)
    x1c = np.clip(x0 + 1, 0, rec.width - 1)

    top = src[y0c][:, x0c] * (1 - wx) + src[y0c][:, x1c] * wx
    bot = src[y1c][:, x0c] * (1 - wx) + src[y1c][:, x1c] * wx
    out = top * (1 - wy) + bot * wy
    return Tensor((out_h, out_w, rec.channels), "f32", out)


def one_hot(class_idx: int, num_classes: int) -> Tensor:
    """Length-num_classes f32 vector with 1.0 at class_idx."""
    if not 0 <= class_idx < num_classes:
        raise InvalidArgument(f"class_idx {class_idx} out of range [0, {num_classes})")
    v = np.zeros(num_classes, dtype=np.float32)
    v[class_idx] = 1.0
    return Tensor((num_classes,), "f32", v)


# -- corpus generation ----------------------------------------------------------


@dataclass
class CorpusSpec:
    """Parameters for a generated sample corpus.

    Encoded file sizes follow a log-normal-like spread: size = median *
    spread**z with z standard normal, so the distribution's median is the
    configured one. A fixed fraction of files is written corrupted (one
    payload byte flipped) to exercise the decode-error path.
    """

    count: int
    size_median_bytes: int = 16 * 1024
    size_spread: float = 1.5
    corrupt_fraction: float = 0.0
    seed: int = 0
    num_classes: int = 102

    def __post_init__(self):
        if self.count < 0:
            raise InvalidArgument("count must be >= 0")
        if not 0 <= self.corrupt_fraction < 1:
            raise InvalidArgument("corrupt_fraction must be in [0, 1)")
        if self.size_spread < 1.0:
            raise InvalidArgument("size_spread must be >= 1.0")


@dataclass
class CorpusManifest:
    """Result of corpus generation: ordered entries plus the corrupted side-list."""

    entries: list[tuple[str, int]] = field(default_factory=list)
    corrupted: list[str] = field(default_factory=list)


_CHANNELS = 3  # corpus samples are three-channel, matching the resize targets


def generate_corpus(tier: StorageTier, spec: CorpusSpec) -> CorpusManifest:
    """Write a seeded pseudo-random IMGBIN corpus plus manifest onto *tier*.

    Returns the manifest written to MANIFEST_NAME (CORRUPTED_NAME holds the
    side-list). Same seed, same spec: byte-identical corpus.
    """
    rng = np.random.default_rng(spec.seed)
    overhead = IMGBIN_HEADER.size + 4
    n_corrupt = int(spec.corrupt_fraction * spec.count)
    corrupt_idx = set(
        rng.choice(spec.count, size=n_corrupt, replace=False).tolist()
    ) if n_corrupt else set()

    manifest = CorpusManifest()
    log_spread = np.log(spec.size_spread)
    for i in range(spec.count):
        target = spec.size_median_bytes * float(np.exp(rng.standard_normal() * log_spread))
        payload_target = max(int(target) - overhead, _CHANNELS)
        width = max(1, int(round(np.sqrt(payload_target / _CHANNELS))))
        height = max(1, int(round(payload_target / (width * _CHANNELS))))
        pixels = rng.integers(0, 256, size=width * height * _CHANNELS, dtype=np.uint8)
        rec = ImageRecord(width, height, _CHANNELS, pixels.tobytes())
        blob = encode_imgbin(rec)
        if i in corrupt_idx:
            pos = IMGBIN_HEADER.size + int(rng.integers(0, len(rec.pixel_data)))
            blob = blob[:pos] + bytes([blob[pos] ^ 0xFF]) + blob[pos + 1 :]
        relpath = f"img/{i:06d}.imgbin"
        tier.write_file(relpath, blob)
        label = int(rng.integers(0, spec.num_classes))
        manifest.entries.append((relpath, label))
        if i in corrupt_idx:
            manifest.corrupted.append(relpath)

    lines = "".join(f"{p}\t{c}\n" for p, c in manifest.entries)
    tier.write_file(MANIFEST_NAME, lines.encode("utf-8"))
    side = "".join(f"{p}\n" for p in manifest.corrupted)
    tier.write_file(CORRUPTED_NAME, side.encode("utf-8"))
    return manifest


def load_manifest(tier: StorageTier, relpath: str = MANIFEST_NAME) -> list[tuple[str, int]]:
    """Read a manifest file back into (relpath, class_idx) pairs."""
    text = tier.read_file(relpath).decode("utf-8")
    entries = []
    for line in text.splitlines():
        if not line:
            continue
        path, _, label = line.partition("\t")
        entries.append((path, int(label)))
    return entries


# -- synthetic training-step consumer --------------------------------------------


@dataclass
class ConsumerCost:
    """Per-batch compute model: a fixed duration, an arithmetic kernel, or both.

    duration_s sleeps for a fixed wall time (the timing-oracle mode);
    kernel_passes runs that many fused multiply-add sweeps over the batch
    tensors, exercising real CPU contention with the input pipeline.
    """

    duration_s: float = 0.0
    kernel_passes: int = 0


@dataclass
class StepStats:
    wall_time_s: float
    checksum: int
    kernel_result: float = 0.0


def consumer_step(batch, cost: ConsumerCost) -> StepStats:
    """Consume one batch: checksum its payloads, then do the configured work."""
    start = time.monotonic()
    checksum = 0
    arrays = []
    for elem in batch.elements:
        payload = elem.payload
        if isinstance(payload, Tensor):
            checksum = zlib.crc32(payload.to_bytes(), checksum)
            arrays.append(payload.data)
        elif isinstance(payload, (bytes, bytearray)):
            checksum = zlib.crc32(payload, checksum)
        else:
            checksum = zlib.crc32(repr(payload).encode(), checksum)
        if isinstance(elem.label, Tensor):
            checksum = zlib.crc32(elem.label.to_bytes(), checksum)

    kernel_result = 0.0
    if cost.kernel_passes > 0 and arrays:
        acc = np.zeros_like(arrays[0])
        for _ in range(cost.kernel_passes):
            for a in arrays:
                acc = acc * 1.0000001 + a
        kernel_result = float(acc.sum())
    if cost.duration_s > 0:
        time.sleep(cost.duration_s)
    return StepStats(time.monotonic() - start, checksum, kernel_result)
