"""SplitMix64 generator.

Chosen because it is trivial to reproduce bit-for-bit in any language: the
state is a single u64, advanced by the golden-ratio increment and passed
through the standard finalizer.
"""

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV53 = 1.0 / (1 << 53)


def _mix(z):
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def derive_seed(parent, index):
    """Seed of the child stream for item ``index`` (parent XOR index)."""
    return (int(parent) ^ int(index)) & MASK64


class Prng:
    """Single-owner SplitMix64 stream."""

    __slots__ = ("state",)

    def __init__(self, seed=0):
        self.state = int(seed) & MASK64

    def next_u64(self):
        self.state = (self.state + GOLDEN) & MASK64
        return _mix(self.state)

    def uniform(self):
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _INV53

    def uniform_range(self, lo, hi):
        return lo + (hi - lo) * self.uniform()

    def u64_array(self, n):
        """Next ``n`` outputs as a uint64 array (same values as ``n`` calls to next_u64)."""
        n = int(n)
        with np.errstate(over="ignore"):
            k = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + k * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN) & MASK64
        return z

    def uniform_array(self, n):
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _INV53
