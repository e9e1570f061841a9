"""Named random streams.

Every random draw in the package comes from ``stream(seed, *keys)``: a Philox
counter-based generator keyed by the root seed plus a tuple of stream names
and indices. Streams never share state, so the order in which they are
created (or the thread that consumes them) cannot change any result.
"""

from __future__ import annotations

import zlib

import numpy as np


def _encode(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        raise TypeError("boolean stream keys are ambiguous")
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        # offset keeps string keys disjoint from small integer keys
        return (1 << 40) + zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"unsupported stream key {key!r}")


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for the stream named ``keys`` under ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_encode(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
