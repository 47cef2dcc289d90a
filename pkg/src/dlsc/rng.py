"""Small deterministic PRNG used for patch-anchor sampling.

Patch anchors must be reproducible from a recorded 64-bit seed regardless of
the numpy version in use, so the sampler gets its own xorshift-family
generator (xoshiro256**, seeded through splitmix64) instead of numpy's
Generator.  Everything else in the package that needs randomness (synthetic
noise, random bases) uses numpy's seeded machinery.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


class Xoshiro256StarStar:
    """xoshiro256** with splitmix64 seed expansion."""

    def __init__(self, seed: int) -> None:
        state = seed & _MASK64
        s = []
        for _ in range(4):
            value, state = _splitmix64(state)
            s.append(value)
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (self._rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = self._rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n) via the multiply-high reduction."""
        if n <= 0:
            raise ValueError("randrange bound must be positive")
        return (self.next_u64() * n) >> 64

    @staticmethod
    def _rotl(x: int, k: int) -> int:
        return ((x << k) | (x >> (64 - k))) & _MASK64
