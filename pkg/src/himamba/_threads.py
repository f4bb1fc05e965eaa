"""Thread cap shared by the parallel kernels.

The cap comes from ``HIMAMBA_THREADS`` unless overridden with
:func:`set_threads` or the :func:`threads` context manager.
"""
import contextlib
import os
from concurrent.futures import ThreadPoolExecutor

_override = None
_pools = {}


def get_threads():
    if _override is not None:
        return _override
    env = os.environ.get("HIMAMBA_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def set_threads(n):
    global _override
    _override = None if n is None else max(1, int(n))


@contextlib.contextmanager
def threads(n):
    global _override
    prev = _override
    set_threads(n)
    try:
        yield
    finally:
        _override = prev


def run_chunks(fn, chunks):
    """Call ``fn(lo, hi)`` for every chunk, on up to ``get_threads()`` threads."""
    n = min(get_threads(), len(chunks))
    if n <= 1:
        for lo, hi in chunks:
            fn(lo, hi)
        return
    pool = _pools.get(n)
    if pool is None:
        pool = _pools[n] = ThreadPoolExecutor(max_workers=n, thread_name_prefix="himamba")
    for f in [pool.submit(fn, lo, hi) for lo, hi in chunks]:
        f.result()
