"""Fork-join helper for independent tasks.

Results always come back in input order, so reductions over them are
deterministic whatever the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def available_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover - non-Linux
        return max(1, os.cpu_count() or 1)


def map_ordered(fn, items, workers: int | None = 1):
    """``[fn(x) for x in items]``, optionally spread over worker processes.

    ``workers=None`` means all available CPUs. ``fn`` must be picklable
    (a module-level function) when more than one worker is used.
    """
    items = list(items)
    n = available_workers() if workers is None else int(workers)
    if n < 1:
        raise ValueError("workers must be >= 1")
    n = min(n, len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * n))))
