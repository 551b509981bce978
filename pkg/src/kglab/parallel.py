"""Deterministic parallel map, capped by the LAB_THREADS environment variable."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("LAB_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """``list(map(fn, items))``; results keep input order for any thread count."""
    items = list(items)
    n = max_workers()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
