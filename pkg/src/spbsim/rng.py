"""Counter-based random streams.

Every stochastic routine takes an explicit integer seed and derives
independent streams as ``Philox(SeedSequence([seed, *keys]))``.
"""
import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, keys)])))
