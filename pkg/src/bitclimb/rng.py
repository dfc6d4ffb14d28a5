"""Portable pseudo-random generator.

SplitMix64 (Steele, Lea & Flood, "Fast splittable pseudorandom number
generators", OOPSLA 2014).  The state is a 64-bit counter advanced by the
golden-ratio increment; each output is a fixed mix of the new state:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)

All arithmetic is modulo 2**64.  Because output ``k`` depends only on
``seed + k * GAMMA``, blocks of outputs can be produced with numpy and are
bit-identical to the scalar stream.

Derived draws:

* ``below(n)``: ``((out >> 32) * n) >> 32`` (multiply-shift, n < 2**32).
* ``uniform()``: ``(out >> 11) * 2**-53``.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, stream: int) -> int:
    """Independent seed for a named sub-stream of ``seed``."""
    return _mix((int(seed) * GAMMA + _mix(int(stream) & MASK64)) & MASK64)


class SplitMix64:
    """Sequential SplitMix64 stream with scalar and block draws."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return _mix(self.state)

    def u64_array(self, n: int) -> np.ndarray:
        """The next ``n`` outputs, identical to ``n`` calls of :meth:`next_u64`."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GAMMA)
            out = _mix_array(states)
        self.state = (self.state + n * GAMMA) & MASK64
        return out

    def below(self, n: int) -> int:
        """Integer uniform on ``[0, n)``."""
        if not 0 < n < (1 << 32):
            raise ValueError(f"bound must be in [1, 2**32), got {n}")
        return ((self.next_u64() >> 32) * n) >> 32

    def below_array(self, n: int, size: int) -> np.ndarray:
        if not 0 < n < (1 << 32):
            raise ValueError(f"bound must be in [1, 2**32), got {n}")
        hi = self.u64_array(size) >> np.uint64(32)
        return ((hi * np.uint64(n)) >> np.uint64(32)).astype(np.int64)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_array(self, size: int) -> np.ndarray:
        return (self.u64_array(size) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def sample_without_replacement(self, population: int, k: int) -> list[int]:
        """First ``k`` entries of a partial Fisher-Yates shuffle of ``range(population)``."""
        if not 0 <= k <= population:
            raise ValueError(f"cannot draw {k} of {population}")
        pool = list(range(population))
        for i in range(k):
            j = i + self.below(population - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
