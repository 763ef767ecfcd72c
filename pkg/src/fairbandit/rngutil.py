"""Seeded random generator construction.

Every random draw in the package flows from a Philox counter-based
generator so runs are reproducible bit-for-bit across platforms.
Substreams are derived from (seed, spawn path) pairs, never by
consuming an ancestor stream.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream identified by ``(seed, *path)``.

    The same (seed, path) always yields the same stream; distinct paths
    yield statistically independent streams.
    """
    ss = np.random.SeedSequence(seed, spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(ss))


def replicate_seed(base_seed: int, replicate: int) -> int:
    """Per-replicate seed; replicate i uses base_seed + i."""
    return base_seed + replicate
