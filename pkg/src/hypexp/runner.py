"""Thread pool with deterministic collection order.

Tasks must be pure given their arguments; results come back in
submission order no matter how the pool interleaves them, so output
files are byte-identical across worker counts.  The numeric kernels
release the GIL, which is what makes threads worth having here.
"""

__all__ = ["thread_count", "run_tasks"]

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count(requested=None):
    """Worker count: explicit request, else HYPEXP_THREADS, else 1.

    The conservative default keeps small runs free of pool overhead;
    large sweeps opt in via the environment.
    """
    if requested is None:
        requested = os.environ.get("HYPEXP_THREADS", "")
        if not str(requested).strip():
            return 1
    n = int(requested)
    if n < 1:
        raise ValueError("thread count must be at least 1")
    return n


def run_tasks(fn, arg_tuples, threads=None):
    """Apply fn to each argument tuple; results in submission order.

    The first failing task (by index, not by completion time) raises,
    so errors are as reproducible as results.
    """
    arg_tuples = list(arg_tuples)
    n = thread_count(threads)
    if n == 1 or len(arg_tuples) <= 1:
        return [fn(*args) for args in arg_tuples]
    with ThreadPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(fn, *args) for args in arg_tuples]
        return [f.result() for f in futures]
