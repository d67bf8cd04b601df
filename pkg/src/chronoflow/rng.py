"""Deterministic pseudo-random source: splitmix64-seeded xoshiro256**.

Simulated sensors must be reproducible bit-for-bit across runs and across
implementations, so the generator is pinned to a named, published
algorithm rather than any runtime's default RNG. Test vectors are frozen
from an independent reference implementation.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class Xoshiro256StarStar:
    """xoshiro256** seeded with four successive splitmix64 outputs."""

    __slots__ = ("_s0", "_s1", "_s2", "_s3")

    def __init__(self, seed: int):
        state = seed & _MASK64
        state, self._s0 = splitmix64(state)
        state, self._s1 = splitmix64(state)
        state, self._s2 = splitmix64(state)
        state, self._s3 = splitmix64(state)

    def next_u64(self) -> int:
        s1 = self._s1
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 = self._s2 ^ self._s0
        s3 = self._s3 ^ s1
        self._s1 = s1 ^ s2
        self._s0 = self._s0 ^ s3
        self._s2 = s2 ^ t
        self._s3 = _rotl(s3, 45)
        return result

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * (2.0**-53)

    def randrange(self, bound: int) -> int:
        """Uniform-ish integer in [0, bound) via modulo reduction.

        The modulo bias is negligible for the bounds used here (all far
        below 2**64) and keeps the draw count per emission fixed, which
        the determinism contract depends on.
        """
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % bound

    def randint(self, lo: int, hi: int) -> int:
        """Uniform-ish integer in [lo, hi], both ends inclusive."""
        if hi < lo:
            raise ValueError("hi < lo")
        return lo + self.randrange(hi - lo + 1)
