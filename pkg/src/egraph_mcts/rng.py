"""Seed derivation.

All randomness in the package flows through ``random.Random`` instances whose
seeds are derived with SplitMix64, so a seed tree can be split per benchmark
case, planning stage and task without the streams overlapping.
"""

import random

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One SplitMix64 output step for state ``x`` (Steele et al. constants)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *keys: int) -> int:
    """Fold integer keys into ``seed``; the result is a 64-bit child seed."""
    s = splitmix64(seed & MASK64)
    for k in keys:
        s = splitmix64(s ^ (k & MASK64))
    return s


def make_rng(seed: int, *keys: int) -> random.Random:
    return random.Random(derive_seed(seed, *keys))
