"""Worker-count resolution and deterministic path partitioning."""

import os
from concurrent.futures import ThreadPoolExecutor

from .errors import ConfigurationError

THREADS_ENV = "SMP_LAB_THREADS"

# Path blocks are a fixed size so results never depend on the worker count.
PATH_BLOCK = 256


def resolve_threads(threads=None):
    """Return the worker count: explicit value, then env var, then 1."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV)
        if raw is None or raw == "":
            return 1
        try:
            threads = int(raw)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    threads = int(threads)
    if threads < 1:
        raise ConfigurationError(f"thread count must be >= 1, got {threads}")
    return threads


def path_blocks(n_paths, block=PATH_BLOCK):
    """Fixed ``(start, stop)`` path ranges covering ``range(n_paths)``."""
    return [(s, min(s + block, n_paths)) for s in range(0, n_paths, block)]


def run_blocks(fn, blocks, threads=None):
    """Apply ``fn(start, stop)`` to every block, possibly on a thread pool.

    Each call must write to a disjoint slice; return values are collected in
    block order so the combination order is fixed.
    """
    threads = resolve_threads(threads)
    if threads == 1 or len(blocks) <= 1:
        return [fn(a, b) for a, b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, a, b) for a, b in blocks]
        return [f.result() for f in futures]
