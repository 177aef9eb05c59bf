"""Counter-based random streams keyed by (seed, purpose, index...).

Every block of trajectories draws from its own Philox stream, so results do
not depend on how blocks are distributed over worker processes.
"""

from __future__ import annotations

import numpy as np

# purpose tags, part of every stream key
PROPAGATOR = 1
GROUND_ENERGY = 2
FIRST_EXIT = 3
LEMMA = 4

#: trajectories per stream block; changing it changes every estimate
BLOCK_SIZE = 8192


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def blocks(samples: int, block_size: int = BLOCK_SIZE) -> list[int]:
    """Sizes of the consecutive blocks covering ``samples`` trajectories."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    full, rest = divmod(int(samples), block_size)
    return [block_size] * full + ([rest] if rest else [])
