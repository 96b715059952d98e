"""Process-pool helpers with a LATENTEPI_THREADS cap and stable ordering."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def worker_count(n_tasks: int | None = None) -> int:
    cap = os.cpu_count() or 1
    env = os.environ.get("LATENTEPI_THREADS")
    if env:
        try:
            cap = max(1, min(cap, int(env)))
        except ValueError:
            raise ValueError(f"LATENTEPI_THREADS must be an integer, got {env!r}")
    if n_tasks is not None:
        cap = min(cap, max(1, n_tasks))
    return cap


def parallel_map(fn, items, workers: int | None = None) -> list:
    """Map preserving item order; falls back to a plain loop for one worker.

    Results depend only on each item, so scheduling cannot change the output.
    """
    items = list(items)
    if workers is None:
        workers = worker_count(len(items))
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=1))
