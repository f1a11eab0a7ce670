"""Replicate worker pool.

The jitted sweep and walk kernels release the GIL, so a thread pool gives
real parallelism without pickling environments or geometries.  Results come
back in input order, which keeps aggregated output independent of the
worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def pmap(fn: Callable, items: Iterable, workers: int = 1) -> list:
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
