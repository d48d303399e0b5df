"""Composable ingestion pipeline stages.

A Dataset is a chain of stages over a source list: buffered shuffle,
order-preserving parallel map, error suppression, batching, and a prefetch
stage that runs a single background producer over a bounded double-ended
buffer. Stages hand items downstream in-band; per-element failures travel as
markers so a downstream ignore-errors stage can drop exactly the failed
elements.

A Dataset is single-pass: one epoch per instance. Rebuild the chain for the
next epoch.
"""

from __future__ import annotations

import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from random import Random
from typing import Any, Callable, Iterable, Iterator

from .errors import ElementError, InvalidArgument


@dataclass
class Element:
    """One sample travelling through the pipeline."""

    payload: Any
    label: Any = None
    seq_id: int = 0


@dataclass
class Batch:
    """A group of consecutive elements plus its 0-based position."""

    elements: list[Element]
    batch_index: int

    def __len__(self) -> int:
        return len(self.elements)


class _EndOfEpoch:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "EndOfEpoch"


END_OF_EPOCH = _EndOfEpoch()


@dataclass
class _Failure:
    """In-band marker for a failed element; raised if it reaches the consumer."""

    seq_id: int
    error: BaseException
    batch_index: int | None = None


class PipelineStats:
    """Counters shared along one stage chain."""

    def __init__(self):
        self._lock = threading.Lock()
        self.dropped = 0
        self.prefetch_peak = 0

    def count_dropped(self) -> None:
        with self._lock:
            self.dropped += 1

    def record_peak(self, occupancy: int) -> None:
        with self._lock:
            if occupancy > self.prefetch_peak:
                self.prefetch_peak = occupancy


class _BoundedBuffer:
    """Bounded deque with condition-variable handoff between one producer and one consumer."""

    def __init__(self, capacity: int, stats: PipelineStats):
        self._dq: deque = deque()
        self._capacity = capacity
        self._cv = threading.Condition()
        self._closed = False
        self._stats = stats

    def put(self, item) -> bool:
        """Block while full; False once the buffer is closed."""
        with self._cv:
            while len(self._dq) >= self._capacity and not self._closed:
                self._cv.wait()
            if self._closed:
                return False
            self._dq.append(item)
            self._stats.record_peak(len(self._dq))
            self._cv.notify_all()
            return True

    def get(self):
        with self._cv:
            while not self._dq:
                if self._closed:
                    return _PRODUCER_END
                self._cv.wait()
            item = self._dq.popleft()
            self._cv.notify_all()
            return item

    def close(self) -> None:
        with self._cv:
            self._closed = True
            self._cv.notify_all()


_PRODUCER_END = object()


class _Raise:
    """In-band carrier for a non-element-scoped failure crossing the prefetch buffer."""

    def __init__(self, error: BaseException):
        self.error = error


class Dataset:
    """A stage chain with a single-pass terminal iterator.

    Construct with :func:`from_slices`, then chain transformations; each
    method returns a new Dataset sharing this chain's statistics. Drive it
    with :meth:`next` (returns END_OF_EPOCH forever once exhausted) or plain
    iteration.
    """

    def __init__(self, build: Callable[[], Iterator], stats: PipelineStats):
        self._build = build
        self.stats = stats
        self._stream: Iterator | None = None
        self._exhausted = False

    # -- construction -------------------------------------------------------

    @staticmethod
    def from_slices(items: Iterable[tuple[Any, Any]]) -> "Dataset":
        """Source dataset yielding (payload, label) pairs in list order."""
        pairs = list(items)
        stats = PipelineStats()

        def build():
            for i, (payload, label) in enumerate(pairs):
                yield Element(payload=payload, label=label, seq_id=i)

        return Dataset(build, stats)

    def _derive(self, wrap: Callable[[Iterator], Iterator]) -> "Dataset":
        upstream_build = self._build
        return Dataset(lambda: wrap(upstream_build()), self.stats)

    def shuffle(self, buffer_size: int, seed: int) -> "Dataset":
        """Buffered shuffle: emit a uniformly chosen buffered item, refill from upstream."""
        if buffer_size < 1:
            raise InvalidArgument(f"shuffle buffer_size must be >= 1, got {buffer_size}")

        def wrap(upstream):
            rng = Random(seed)
            buf = []
            for item in upstream:
                buf.append(item)
                if len(buf) < buffer_size:
                    continue
                j = rng.randrange(len(buf))
                out = buf[j]
                buf[j] = buf[-1]
                buf.pop()
                yield out
            while buf:
                j = rng.randrange(len(buf))
                out = buf[j]
                buf[j] = buf[-1]
                buf.pop()
                yield out

        return self._derive(wrap)

    def map_parallel(self, fn: Callable[[Element], Element], parallelism: int) -> "Dataset":
        """Apply *fn* with up to *parallelism* concurrent calls, preserving order.

        The in-flight window is bounded by *parallelism*. A failing call turns
        its element into an in-band failure marker carrying the seq_id.
        """
        if parallelism < 1:
            raise InvalidArgument(f"parallelism must be >= 1, got {parallelism}")

        def apply(elem: Element):
            try:
                return fn(elem)
            except Exception as e:  # noqa: BLE001 - per-element isolation is the contract
                return _Failure(elem.seq_id, e)

        def wrap(upstream):
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                window: deque = deque()
                for item in upstream:
                    if isinstance(item, _Failure):
                        window.append(item)
                    else:
                        window.append(pool.submit(apply, item))
                    if len(window) >= parallelism:
                        head = window.popleft()
                        yield head if isinstance(head, _Failure) else head.result()
                while window:
                    head = window.popleft()
                    yield head if isinstance(head, _Failure) else head.result()

        return self._derive(wrap)

    def ignore_errors(self) -> "Dataset":
        """Silently drop elements that failed upstream, counting them."""
        stats = self.stats

        def wrap(upstream):
            for item in upstream:
                if isinstance(item, _Failure):
                    stats.count_dropped()
                    continue
                yield item

        return self._derive(wrap)

    def batch(self, batch_size: int, drop_remainder: bool = False) -> "Dataset":
        """Group consecutive elements; emit the final partial group unless dropped."""
        if batch_size < 1:
            raise InvalidArgument(f"batch_size must be >= 1, got {batch_size}")

        def wrap(upstream):
            acc: list[Element] = []
            index = 0
            for item in upstream:
                if isinstance(item, _Failure):
                    item.batch_index = index
                    yield item
                    continue
                acc.append(item)
                if len(acc) == batch_size:
                    yield Batch(acc, index)
                    acc = []
                    index += 1
            if acc and not drop_remainder:
                yield Batch(acc, index)

        return self._derive(wrap)

    def prefetch(self, depth: int) -> "Dataset":
        """Run a background producer filling a bounded buffer of *depth* items.

        depth 0 is a synchronous pass-through. Otherwise the producer eagerly
        pulls from upstream, blocks while the buffer is full, and is woken by
        each consumption; order and content are passed through unchanged.
        """
        if depth < 0:
            raise InvalidArgument(f"prefetch depth must be >= 0, got {depth}")
        if depth == 0:
            return self._derive(lambda upstream: upstream)
        stats = self.stats

        def wrap(upstream):
            buf = _BoundedBuffer(depth, stats)

            def produce():
                try:
                    for item in upstream:
                        if not buf.put(item):
                            break
                    else:
                        buf.put(_PRODUCER_END)
                except BaseException as e:  # noqa: BLE001 - relayed to the consumer
                    buf.put(_Raise(e))
                finally:
                    upstream.close()

            worker = threading.Thread(target=produce, name="prefetch-producer", daemon=True)
            worker.start()
            try:
                while True:
                    item = buf.get()
                    if item is _PRODUCER_END:
                        break
                    if isinstance(item, _Raise):
                        raise item.error
                    yield item
            finally:
                buf.close()
                worker.join(timeout=10.0)

        return self._derive(wrap)

    # -- consumption ----------------------------------------------------------

    def _ensure_stream(self) -> Iterator:
        if self._stream is None:
            self._stream = self._build()
        return self._stream

    def next(self):
        """Next item in pipeline order, or END_OF_EPOCH (idempotently) when done.

        Raises ElementError if a failure marker reaches the consumer.
        """
        if self._exhausted:
            return END_OF_EPOCH
        stream = self._ensure_stream()
        try:
            item = next(stream)
        except StopIteration:
            self._exhausted = True
            return END_OF_EPOCH
        if isinstance(item, _Failure):
            err = ElementError(item.seq_id, f"element {item.seq_id} failed: {item.error}")
            err.batch_index = item.batch_index
            err.__cause__ = item.error
            raise err
        return item

    def __iter__(self):
        while True:
            item = self.next()
            if item is END_OF_EPOCH:
                return
            yield item

    def close(self) -> None:
        """Stop iteration early, shutting down stage workers."""
        self._exhausted = True
        if self._stream is not None:
            self._stream.close()


# -- module-level operation aliases ------------------------------------------------


def from_slices(items: Iterable[tuple[Any, Any]]) -> Dataset:
    return Dataset.from_slices(items)


def shuffle(ds: Dataset, buffer_size: int, seed: int) -> Dataset:
    return ds.shuffle(buffer_size, seed)


def map_parallel(ds: Dataset, fn: Callable[[Element], Element], parallelism: int) -> Dataset:
    return ds.map_parallel(fn, parallelism)


def ignore_errors(ds: Dataset) -> Dataset:
    return ds.ignore_errors()


def batch(ds: Dataset, batch_size: int, drop_remainder: bool = False) -> Dataset:
    return ds.batch(batch_size, drop_remainder)


def prefetch(ds: Dataset, depth: int) -> Dataset:
    return ds.prefetch(depth)
