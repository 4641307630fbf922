"""Deterministic chunked execution, serial or across worker processes.

Work items are split into fixed-size chunks whose boundaries depend only
on the item count, never on the worker budget. Partial results come back
in chunk order, so any merge performed in that order (including floating
point accumulation) is bit-identical for every worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable

#: Default number of work items per chunk.
CHUNK_SIZE = 1024


def run_chunked(
    n_items: int,
    worker: Callable[..., Any],
    args: tuple = (),
    workers: int = 1,
    chunk_size: int = CHUNK_SIZE,
) -> list:
    """Apply worker(start, stop, *args) over [0, n_items) in fixed chunks.

    Returns the list of partial results in chunk order. The worker must be
    a picklable top-level callable when workers > 1.
    """
    if n_items < 0:
        raise ValueError(f"n_items must be nonnegative, got {n_items}")
    if workers < 1:
        raise ValueError(f"workers must be at least 1, got {workers}")
    bounds = [
        (start, min(start + chunk_size, n_items))
        for start in range(0, n_items, chunk_size)
    ]
    if workers == 1 or len(bounds) <= 1:
        return [worker(start, stop, *args) for start, stop in bounds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(worker, start, stop, *args) for start, stop in bounds]
        return [f.result() for f in futures]
