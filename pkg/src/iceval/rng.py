"""Reproducible random streams.

Every random draw in the package comes from a generator derived from
``(seed, *key)`` through :class:`numpy.random.SeedSequence`.  Replicated
experiments draw replications in fixed-size blocks, one stream per block, so
results do not depend on how blocks are spread over workers.
"""
from __future__ import annotations

import numpy as np

PRNG_ID = "numpy.Philox4x64-10/SeedSequence"
BLOCK_SIZE = 1000


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream named by ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def blocks(total: int, size: int = BLOCK_SIZE):
    """Yield ``(block_index, count)`` covering ``total`` replications."""
    start, b = 0, 0
    while start < total:
        count = min(size, total - start)
        yield b, count
        start += count
        b += 1
