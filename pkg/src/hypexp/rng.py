"""Deterministic random streams for the experiment layer.

Every random draw in a run comes from a counter-based Philox stream
keyed by (seed, task index, purpose), so a task's randomness depends
only on its key, never on scheduling, thread count, or how many draws
other tasks made.  Purposes are short strings hashed with CRC32;
distinct purposes give statistically independent streams under the
same seed and task.
"""

__all__ = ["stream", "stream_key"]

import zlib

import numpy as np

_U32 = 0xFFFFFFFF
_U64 = 0xFFFFFFFFFFFFFFFF


def stream_key(seed, task=0, purpose="main"):
    """The 128-bit Philox key for one (seed, task, purpose) triple."""
    seed = int(seed)
    task = int(task)
    if not 0 <= seed <= _U64:
        raise ValueError("seed must fit in 64 unsigned bits")
    if not 0 <= task <= _U32:
        raise ValueError("task index must fit in 32 bits")
    code = zlib.crc32(str(purpose).encode("utf-8"))
    return np.array([seed, (task << 32) | code], dtype=np.uint64)


def stream(seed, task=0, purpose="main"):
    """Generator for one task; draws are independent of all others."""
    return np.random.Generator(
        np.random.Philox(key=stream_key(seed, task, purpose)))
