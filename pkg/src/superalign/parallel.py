"""Thread-count policy (``SUPERALIGN_THREADS``) and an order-preserving map."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "SUPERALIGN_THREADS"


def thread_count() -> int:
    """Worker count from ``SUPERALIGN_THREADS``; 0 or unset means CPU count."""
    raw = os.environ.get(ENV_VAR, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = os.cpu_count() or 1
    return n


def parallel_map(fn, items, threads=None):
    """``list(map(fn, items))`` on a thread pool; results keep input order."""
    items = list(items)
    n = thread_count() if threads is None else max(1, int(threads))
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
