#!/usr/bin/env python3
# src/chuk_gmm_sce/seeding.py
"""
Counter-based random streams.

Every replication, subsample and draw batch gets its own ``SeedSequence``
spawn key, so results do not depend on thread count or execution order.
"""

from typing import Sequence

import numpy as np

SeedLike = int | np.random.SeedSequence


def seed_sequence(seed: SeedLike, *key: int) -> np.random.SeedSequence:
    """Seed sequence for ``seed`` addressed by an integer spawn key."""
    if isinstance(seed, np.random.SeedSequence):
        base_key: Sequence[int] = tuple(seed.spawn_key)
        return np.random.SeedSequence(seed.entropy, spawn_key=(*base_key, *key))
    return np.random.SeedSequence(int(seed), spawn_key=tuple(key))


def make_rng(seed: SeedLike, *key: int) -> np.random.Generator:
    """Philox generator on the substream ``key`` of ``seed``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *key)))


def open_uniforms(rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
    """Uniforms strictly inside (0, 1), safe for inverse-CDF sampling."""
    bits = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return (bits.astype(float) + 0.5) / float(2**53)
