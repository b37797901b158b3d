"""Path-chunk scheduling shared by the Monte Carlo drivers.

Paths are split into fixed-size chunks that do not depend on the worker
count, and chunk results are returned in chunk order, so any pool size gives
the same numbers.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

CHUNK_PATHS = 50


def path_chunks(M: int, size: int = CHUNK_PATHS) -> list[range]:
    return [range(a, min(a + size, M)) for a in range(0, M, size)]


def default_workers() -> int:
    return os.cpu_count() or 1


def map_chunks(fn, chunks, workers: int = 1) -> list:
    """``[fn(c) for c in chunks]``, optionally spread over a process pool."""
    chunks = list(chunks)
    if workers is None:
        workers = default_workers()
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    if workers == 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ProcessPoolExecutor(max_workers=min(workers, len(chunks))) as pool:
        return list(pool.map(fn, chunks))
