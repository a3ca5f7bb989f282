"""Deterministic chunked parallelism.

Work is always split into fixed-size chunks first; workers only decide who
computes which chunk.  Combined with counter-based per-item random streams,
results are byte-identical for any worker count.
"""

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import ConfigError

WORKERS_ENV = "REPR_ROBUST_WORKERS"


def resolve_workers(workers=None):
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        workers = int(env) if env else (os.cpu_count() or 1)
    workers = int(workers)
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    return workers


def chunk_starts(total, chunk):
    return list(range(0, total, chunk))


def chunked_map(fn, total, chunk, workers=1):
    """Apply fn(start, stop) over fixed chunks; results in chunk order."""
    starts = chunk_starts(total, chunk)
    bounds = [(s, min(s + chunk, total)) for s in starts]
    if workers <= 1 or len(bounds) <= 1:
        return [fn(s, e) for s, e in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda b: fn(*b), bounds))
