"""Keyed random streams.

Every stochastic step draws from a generator derived from a root seed plus a
tuple of integer keys (task index, instance, replicate, ...), so streams are
independent of evaluation order and can be regenerated in isolation.
"""
from __future__ import annotations

import numpy as np


def seed_sequence(seed: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit integer seed for the stream keyed by ``(seed, *keys)``."""
    lo, hi = seed_sequence(seed, *keys).generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))
