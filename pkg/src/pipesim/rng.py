"""SplitMix64 generator used for every random draw in the simulator.

The algorithm is fixed so that a seed reproduces the same stream in any
language that implements it:

    state = (state + 0x9E3779B97F4A7C15) mod 2**64
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    return z ^ (z >> 31)

Derived draws:

* ``uniform()``  = (next >> 11) * 2**-53, in [0, 1)
* ``normal()``   = sqrt(-2 ln(1 - u1)) * cos(2 pi u2), one normal per two draws
* ``randint(lo, hi)`` = lo + floor(uniform() * (hi - lo + 1))
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, key: int) -> int:
    """Independent stream seed for ``key`` under a parent ``seed``."""
    return mix64((seed * _GOLDEN + mix64(key & MASK64)) & MASK64)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & MASK64
        return mix64(self.state)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def randint(self, lo: int, hi: int) -> int:
        return lo + int(self.uniform() * (hi - lo + 1))
