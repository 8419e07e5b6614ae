"""Portable pseudo-random number generation.

Datasets and model initialisation must be reproducible byte-for-byte across
platforms, so randomness comes from an in-repo generator rather than any
library whose stream may change between versions. The generator is
xoshiro256** (Blackman & Vigna), seeded through splitmix64, both implemented
exactly per their published reference algorithms on 64-bit unsigned words.

All randomness in a run flows from one root seed through named substreams:
``derive_seed(root, "datagen/episode/3")`` gives independent, reproducible
streams per concern, so e.g. toggling augmentation does not shift the
dataset stream.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output word)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, (z ^ (z >> 31)) & _MASK64


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


def derive_seed(root_seed: int, stream: str) -> int:
    """Derive a substream seed from a root seed and a stream name."""
    _, mixed = splitmix64((root_seed ^ _fnv1a64(stream)) & _MASK64)
    return mixed


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** generator; state seeded from ``seed`` via splitmix64."""

    def __init__(self, seed: int):
        state = seed & _MASK64
        words = []
        for _ in range(4):
            state, w = splitmix64(state)
            words.append(w)
        self._s = words

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self, n: int | None = None) -> np.ndarray | float:
        """Uniform float64 in [0, 1) with 53-bit resolution."""
        if n is None:
            return (self.next_u64() >> 11) * 2.0**-53
        out = np.empty(n, dtype=np.float64)
        nxt = self.next_u64
        for i in range(n):
            out[i] = (nxt() >> 11) * 2.0**-53
        return out

    def normal(self, n: int | None = None) -> np.ndarray | float:
        """Standard normal variates via the Box-Muller transform."""
        m = 1 if n is None else n
        out = np.empty(m, dtype=np.float64)
        i = 0
        while i < m:
            # u1 in (0, 1] so log() is finite.
            u1 = 1.0 - ((self.next_u64() >> 11) * 2.0**-53)
            u2 = (self.next_u64() >> 11) * 2.0**-53
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            i += 1
            if i < m:
                out[i] = r * math.sin(2.0 * math.pi * u2)
                i += 1
        if n is None:
            return float(out[0])
        return out

    def normal_array(self, shape: tuple[int, ...]) -> np.ndarray:
        return self.normal(int(np.prod(shape))).reshape(shape)

    def integer(self, bound: int) -> int:
        """Uniform integer in [0, bound) by 53-bit floor scaling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return min(int(self.uniform() * bound), bound - 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.integer(i + 1)
            items[i], items[j] = items[j], items[i]


def substream(root_seed: int, stream: str) -> Xoshiro256StarStar:
    return Xoshiro256StarStar(derive_seed(root_seed, stream))
