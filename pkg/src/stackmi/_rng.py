"""Seed handling.

Every stochastic routine takes an explicit ``seed``: an int, a
``numpy.random.SeedSequence`` or a ``numpy.random.Generator``. Generators are
Philox (counter based) so streams can be split per replication or imputation
without overlap.
"""

from __future__ import annotations

from typing import Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


def as_seed_sequence(seed: SeedLike) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, np.random.Generator):
        # derive a child sequence from the generator's own state
        return np.random.SeedSequence(seed.integers(0, 2**63 - 1, size=4))
    if seed is None:
        raise ValueError("a seed is required; time-based seeding is not supported")
    return np.random.SeedSequence(int(seed))


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(as_seed_sequence(seed)))


def spawn(seed: SeedLike, n: int) -> list[np.random.SeedSequence]:
    return as_seed_sequence(seed).spawn(n)


def child(seed: SeedLike, *keys: int) -> np.random.SeedSequence:
    """Deterministic sub-stream addressed by integer keys (e.g. replication index)."""
    ss = as_seed_sequence(seed)
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + tuple(int(k) for k in keys))
