"""Seeded random streams."""

import numpy as np

__all__ = ("derive_seed", "make_rng", "SEED_MASK")

SEED_MASK = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    """One PCG64 stream per seed; the only source of randomness in the package."""
    return np.random.default_rng(np.random.SeedSequence(seed & SEED_MASK))


def derive_seed(master_seed: int, *keys: int) -> int:
    """Stable 64-bit child seed for a tuple of non-negative integer keys.

    Uses SeedSequence hashing, so the value does not depend on the Python
    process (unlike ``hash``) and distinct key tuples give distinct seeds.
    """
    entropy = [master_seed & SEED_MASK, *(k & SEED_MASK for k in keys)]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])
