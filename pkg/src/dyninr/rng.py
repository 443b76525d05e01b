"""Deterministic 64-bit PRNG used everywhere randomness enters the pipeline.

The generator is xoshiro256** seeded through splitmix64, with the recurrences
written out here so every stream can be reproduced outside this codebase.
Given a 64-bit seed (arbitrary ints are masked to 64 bits):

    splitmix64:   x += 0x9E3779B97F4A7C15
                  z = x
                  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
                  z = (z ^ (z >> 27)) * 0x94D049BB133111EB
                  output z ^ (z >> 31)

Four successive splitmix64 outputs form the xoshiro256** state s0..s3.  Each
draw returns rotl(s1 * 5, 7) * 9, then updates the state:

    t = s1 << 17
    s2 ^= s0;  s3 ^= s1;  s1 ^= s2;  s0 ^= s3;  s2 ^= t;  s3 = rotl(s3, 45)

(all arithmetic mod 2^64, rotl(x, k) rotates the 64-bit word left by k).

Derived draws, in terms of the raw u64 stream:

    uniform:     (u >> 11) * 2**-53                      in [0, 1)
    normal:      Box-Muller on pairs; u1 = ((u >> 11) + 1) * 2**-53 in (0, 1],
                 u2 from the next raw draw as a uniform; the pair yields
                 r*cos(2 pi u2) now and caches r*sin(2 pi u2) for the next
                 call, with r = sqrt(-2 ln u1)
    randbelow:   rejection below the largest multiple of n, then u mod n
    shuffle:     Fisher-Yates from the top index down, j = randbelow(i + 1)
    sample:      partial Fisher-Yates over an index array, first m slots

Interleaving uniform/normal/integer calls consumes the single raw stream in
call order; only the Box-Muller twin is cached between normal draws.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_TWO53_INV = 2.0 ** -53


def _splitmix64(x: int):
    x = (x + _SPLITMIX_GAMMA) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, (z ^ (z >> 31)) & _MASK


class Xoshiro256:
    """xoshiro256** stream with the derived draws documented above."""

    def __init__(self, seed: int):
        x = int(seed) & _MASK
        state = []
        for _ in range(4):
            x, s = _splitmix64(x)
            state.append(s)
        if not any(state):  # the all-zero state is a fixed point
            state[0] = 1
        self._s = state
        self._normal_cache: float | None = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        r = (s1 * 5) & _MASK
        r = ((r << 7) | (r >> 57)) & _MASK
        r = (r * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & _MASK
        self._s = [s0, s1, s2, s3]
        return r

    def _raw_block(self, n: int) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        out = np.empty(n, dtype=np.uint64)
        for i in range(n):
            r = (s1 * 5) & _MASK
            r = ((r << 7) | (r >> 57)) & _MASK
            out[i] = (r * 9) & _MASK
            t = (s1 << 17) & _MASK
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & _MASK
        self._s = [s0, s1, s2, s3]
        return out

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * _TWO53_INV

    def uniforms(self, n: int) -> np.ndarray:
        raw = self._raw_block(n)
        return ((raw >> np.uint64(11)).astype(np.float64)) * _TWO53_INV

    def normal(self) -> float:
        if self._normal_cache is not None:
            z = self._normal_cache
            self._normal_cache = None
            return z
        u1 = ((self.next_u64() >> 11) + 1) * _TWO53_INV
        u2 = (self.next_u64() >> 11) * _TWO53_INV
        r = math.sqrt(-2.0 * math.log(u1))
        self._normal_cache = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        k = 0
        if n and self._normal_cache is not None:
            out[0] = self._normal_cache
            self._normal_cache = None
            k = 1
        pairs = (n - k + 1) // 2
        if pairs:
            raw = self._raw_block(2 * pairs)
            u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO53_INV
            u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * _TWO53_INV
            r = np.sqrt(-2.0 * np.log(u1))
            z = np.empty(2 * pairs, dtype=np.float64)
            z[0::2] = r * np.cos(2.0 * np.pi * u2)
            z[1::2] = r * np.sin(2.0 * np.pi * u2)
            take = n - k
            out[k:] = z[:take]
            if take < 2 * pairs:
                self._normal_cache = float(z[take])
        return out

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        threshold = (_MASK + 1) - ((_MASK + 1) % n)
        while True:
            x = self.next_u64()
            if x < threshold:
                return x % n

    def shuffle(self, arr) -> None:
        """In-place Fisher-Yates on a list or 1-D array."""
        for i in range(len(arr) - 1, 0, -1):
            j = self.randbelow(i + 1)
            arr[i], arr[j] = arr[j], arr[i]

    def sample(self, n: int, m: int) -> np.ndarray:
        """m distinct indices from range(n), partial Fisher-Yates order."""
        if not 0 <= m <= n:
            raise ValueError(f"cannot sample {m} of {n}")
        idx = np.arange(n)
        for i in range(m):
            j = i + self.randbelow(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:m].copy()
