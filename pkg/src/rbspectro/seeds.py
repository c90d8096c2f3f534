"""Deterministic seed derivation for parallel Monte Carlo work.

Every stochastic routine in this package takes an explicit seed. Derived
seeds are built from a base seed plus an integer path, so that workers,
replicas, and channels get reproducible, collision-free RNG streams no
matter how the work is scheduled.
"""

from __future__ import annotations

import numpy as np

Seed = int | tuple | np.random.SeedSequence


def as_seed_sequence(seed: Seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, (int, np.integer)):
        return np.random.SeedSequence(int(seed))
    return np.random.SeedSequence(tuple(int(s) for s in seed))


def derive_seed(base: Seed, *path: int) -> np.random.SeedSequence:
    """Child seed at an integer path below ``base``.

    The path extends the base SeedSequence's spawn key, so distinct paths
    give independent streams and identical paths reproduce bit-identical
    ones.
    """
    root = as_seed_sequence(base)
    key = tuple(root.spawn_key) + tuple(int(p) for p in path)
    return np.random.SeedSequence(entropy=root.entropy, spawn_key=key)


def seed_fingerprint(seed: Seed) -> tuple[int, ...]:
    """Hashable identity of a seed, used to record provenance and to
    verify that no two simulation streams share an RNG stream."""
    ss = as_seed_sequence(seed)
    entropy = ss.entropy if isinstance(ss.entropy, int) else tuple(ss.entropy)
    return (entropy,) + tuple(ss.spawn_key)
