"""Seed derivation. Child streams are addressed by key, never by spawn order."""

import numpy as np


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def derive(seed, *keys: int) -> np.random.SeedSequence:
    """Child of ``seed`` at path ``keys``; calling twice gives the same stream."""
    base = as_seed_sequence(seed)
    return np.random.SeedSequence(base.entropy, spawn_key=tuple(base.spawn_key) + tuple(int(k) for k in keys), pool_size=base.pool_size)
