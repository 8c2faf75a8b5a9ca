"""Deterministic process-parallel map.

Workers are forked so large read-only inputs are inherited rather than
pickled per task; results come back in input order, which keeps every
reduce independent of the worker count.
"""
from __future__ import annotations

import multiprocessing as mp
import os
from typing import Any, Callable, Sequence

_SHARED: Any = None


def available_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


def _call(args):
    fn, item = args
    return fn(_SHARED, item)


def parallel_map(fn: Callable[[Any, Any], Any], items: Sequence, workers: int,
                 shared: Any = None) -> list:
    """``[fn(shared, item) for item in items]`` evaluated on ``workers`` processes."""
    global _SHARED
    if workers < 1:
        raise ValueError("workers must be >= 1")
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(shared, it) for it in items]
    _SHARED = shared
    try:
        ctx = mp.get_context("fork")
        with ctx.Pool(min(workers, len(items))) as pool:
            return pool.map(_call, [(fn, it) for it in items], chunksize=1)
    finally:
        _SHARED = None


def chunked(seq: Sequence, n_chunks: int) -> list:
    """Split ``seq`` into at most ``n_chunks`` contiguous, near-equal pieces."""
    n = len(seq)
    n_chunks = max(1, min(n_chunks, n))
    bounds = [n * i // n_chunks for i in range(n_chunks + 1)]
    return [seq[bounds[i]:bounds[i + 1]] for i in range(n_chunks)]
