"""Seeded randomness.

Every random draw in the package comes from numpy's Philox-4x64 counter-based
generator (10 rounds), seeded through ``SeedSequence(seed)``.  The bit stream is
fixed by numpy's implementation, so a seed reproduces the same data anywhere.
"""
import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))
