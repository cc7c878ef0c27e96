"""Keyed counter-based random streams.

Every stream is a Philox generator whose key is derived from a 64-bit root
seed and a tuple of integers (a node path, a replication index, ...). Streams
do not depend on the order in which they are created, which makes tree
construction and replication loops reproducible under any thread schedule.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def keyed_generator(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, key...)``."""
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))
