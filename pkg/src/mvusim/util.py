"""Small shared utilities: the documented deterministic PRNG."""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


class SplitMix64:
    """splitmix64: the fixed PRNG for reproducible inputs and fixtures.

    x_{n+1} = x_n + 0x9E3779B97F4A7C15; output is the finalizer of x_{n+1}.
    Identical sequences on every platform for a given seed.
    """

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform-ish integer in [lo, hi] (modulo bias negligible here)."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.next_u64() % (hi - lo + 1)

    def ints(self, n: int, lo: int, hi: int) -> list[int]:
        out = splitmix64_ints(self.state, n, lo, hi)
        self.state = (self.state + n * 0x9E3779B97F4A7C15) & MASK64
        return out


def splitmix64_ints(seed: int, n: int, lo: int, hi: int) -> list[int]:
    """Vectorized splitmix64 stream: bit-identical to SplitMix64.ints."""
    if hi < lo:
        raise ValueError(f"empty range [{lo}, {hi}]")
    steps = (np.arange(1, n + 1, dtype=np.uint64)
             * np.uint64(0x9E3779B97F4A7C15))
    z = np.uint64(seed & MASK64) + steps
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    span = np.uint64(hi - lo + 1)
    return (lo + (z % span).astype(np.int64)) .tolist()
