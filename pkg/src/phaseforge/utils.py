"""Process-wide knobs shared by the heavier pipelines."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "PHASEFORGE_THREADS"


def worker_count() -> int:
    """Worker threads for embarrassingly parallel stages, from the
    environment; defaults to 1 (fully serial)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def parallel_map(fn, items):
    """Map preserving order; uses a thread pool only when configured to."""
    items = list(items)
    workers = worker_count()
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
