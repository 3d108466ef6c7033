"""Deterministic pseudo-random generator used for every stochastic choice.

A splitmix64 stream with 64-bit state. Training, weight init, shuffling and
the synthetic data generator all draw from streams derived from one root
seed, so a run is reproducible bit-for-bit from (seed, purpose) alone and
does not depend on numpy's global RNG or on call ordering between purposes.
"""
from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix(z: int) -> int:
    # splitmix64 output function
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


class Rng:
    """splitmix64 stream, forkable into independent purpose-keyed streams."""

    __slots__ = ("_seed", "_state", "_gauss_spare")

    def __init__(self, seed: int):
        self._seed = seed & _MASK64
        self._state = self._seed
        self._gauss_spare: float | None = None

    @property
    def seed(self) -> int:
        return self._seed

    def derive(self, *tokens: int | str) -> "Rng":
        """Fork a stream keyed by (seed, tokens); does not consume state."""
        h = _mix(self._seed ^ _GOLDEN)
        for tok in tokens:
            if isinstance(tok, str):
                h = _mix(h ^ _fnv1a(tok.encode("utf-8")))
            else:
                h = _mix(h ^ (tok & _MASK64) ^ _GOLDEN)
        return Rng(h)

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix(self._state)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        # 53-bit mantissa in [0, 1)
        u = (self.next_u64() >> 11) * 2.0**-53
        return low + (high - low) * u

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        # Box-Muller; one spare cached per pair
        if self._gauss_spare is not None:
            z = self._gauss_spare
            self._gauss_spare = None
        else:
            u1 = ((self.next_u64() >> 11) + 1) * 2.0**-53  # (0, 1]
            u2 = (self.next_u64() >> 11) * 2.0**-53
            r = math.sqrt(-2.0 * math.log(u1))
            theta = 2.0 * math.pi * u2
            z = r * math.cos(theta)
            self._gauss_spare = r * math.sin(theta)
        return mean + std * z

    def randrange(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randrange needs n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list[int]:
        idx = list(range(n))
        self.shuffle(idx)
        return idx

    def uniforms(self, count: int, low: float = 0.0, high: float = 1.0) -> list[float]:
        return [self.uniform(low, high) for _ in range(count)]

    def normals(self, count: int, mean: float = 0.0, std: float = 1.0) -> list[float]:
        return [self.normal(mean, std) for _ in range(count)]
