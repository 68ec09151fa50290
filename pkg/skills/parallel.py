"""
Deterministic chunked execution over voxel ranges.

Work is cut into fixed-size chunks whose boundaries do not depend on the
thread count. Partial sums are combined in chunk order, so a run on N threads
reproduces the single-threaded floats bit for bit.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

CHUNK_SIZE = 16384
THREADS_ENV = "BIASCORRECT_THREADS"

T = TypeVar("T")


def resolve_threads(threads: int | None = None) -> int:
    """Explicit count, else $BIASCORRECT_THREADS, else the number of cores."""
    if threads is None:
        raw = os.getenv(THREADS_ENV, "").strip()
        if raw:
            try:
                threads = int(raw)
            except ValueError:
                raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise ValueError(f"Thread count must be >= 1, got {threads}")
    return threads


class ChunkPool:
    """Runs per-chunk callables, optionally on a thread pool, in a fixed chunk order."""

    def __init__(self, threads: int = 1, chunk_size: int = CHUNK_SIZE):
        if chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
        self.threads = resolve_threads(threads)
        self.chunk_size = chunk_size
        self._executor: ThreadPoolExecutor | None = None

    def __enter__(self) -> "ChunkPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def chunks(self, n: int) -> list[slice]:
        return [slice(start, min(start + self.chunk_size, n)) for start in range(0, n, self.chunk_size)]

    def map(self, fn: Callable[[slice], T], n: int) -> list[T]:
        """fn applied to every chunk of range(n); results in chunk order."""
        chunks = self.chunks(n)
        if self.threads == 1 or len(chunks) <= 1:
            return [fn(chunk) for chunk in chunks]
        if self._executor is None:
            logger.debug(f"Starting chunk pool with {self.threads} threads")
            self._executor = ThreadPoolExecutor(max_workers=self.threads)
        return list(self._executor.map(fn, chunks))

    def sum(self, fn: Callable[[slice], np.ndarray], n: int) -> np.ndarray:
        """Sum of per-chunk partials fn(chunk), accumulated left to right."""
        total = None
        for part in self.map(fn, n):
            total = part if total is None else total + part
        if total is None:
            raise ValueError("Cannot reduce over an empty range")
        return total

    def fill(self, out: np.ndarray, fn: Callable[[slice], np.ndarray], n: int) -> np.ndarray:
        """Write fn(chunk) into out[..., chunk] for every chunk; returns out."""
        def _store(chunk: slice) -> None:
            out[..., chunk] = fn(chunk)

        self.map(_store, n)
        return out
