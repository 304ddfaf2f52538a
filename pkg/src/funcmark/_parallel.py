from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

_THREADS = 1


def set_threads(n: int) -> None:
    """Set the worker count used by chunked evaluation (1 = serial)."""
    global _THREADS
    _THREADS = max(1, int(n))


def get_threads() -> int:
    return _THREADS


def map_chunks(fn, points, chunk=65536, threads=None):
    """Apply ``fn`` to consecutive row blocks of ``points`` and stitch results.

    ``fn`` returns an array or a tuple of arrays with a leading row axis.
    Block boundaries depend only on ``chunk``, so the output does not depend
    on the thread count.
    """
    n = len(points)
    threads = _THREADS if threads is None else threads
    bounds = [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)] or [(0, 0)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda b: fn(points[b[0]:b[1]]), bounds))
    else:
        parts = [fn(points[lo:hi]) for lo, hi in bounds]
    if isinstance(parts[0], tuple):
        return tuple(None if parts[0][k] is None else np.concatenate([p[k] for p in parts])
                     for k in range(len(parts[0])))
    return np.concatenate(parts)
