"""Deterministic pseudo-random numbers based on splitmix64.

All stochastic pieces of the pipeline (phantom synthesis, patch sampling,
weight init) draw from this generator so that a given seed reproduces the
same corpus and the same training run bit-for-bit.
"""

import numpy as np

_MASK = (1 << 64) - 1


class SplitMix64:
    """splitmix64 counter-based generator (Steele et al.)."""

    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self, lo=0.0, hi=1.0):
        # 53-bit mantissa, uniform in [0, 1)
        u = (self.next_u64() >> 11) * 2.0 ** -53
        return lo + (hi - lo) * u

    def randint(self, n):
        """Uniform integer in [0, n)."""
        return self.next_u64() % n


def derive_seed(seed, *tags):
    """Stable sub-seed derivation: hash the tag stream through splitmix64."""
    g = SplitMix64(seed)
    out = g.next_u64()
    for t in tags:
        g = SplitMix64(out ^ (int(t) & _MASK))
        out = g.next_u64()
    return out


def numpy_rng(seed, *tags):
    """numpy Generator keyed by a splitmix64-derived seed (used for normals)."""
    return np.random.default_rng(derive_seed(seed, *tags))
