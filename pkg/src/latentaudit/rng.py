"""Deterministic, platform-independent random streams.

A 64-bit xoshiro256++ generator seeded through SplitMix64. Every consumer of
randomness in this package takes an explicit ``Rng`` so that results are
bit-reproducible from ``(seed, stream_id)`` alone, on any platform and at any
thread count. Gaussian variates come from Box-Muller on the raw stream, never
from numpy's own generators.
"""

from __future__ import annotations

import math

import numpy as np

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV_2_53 = 2.0 ** -53


def _splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (next_state, output)."""
    state = (state + _GOLDEN) & _M64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return state, z ^ (z >> 31)


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _M64
    return h


def derive_seed(seed: int, purpose: str) -> int:
    """Derive an independent sub-seed for a named purpose.

    Keeps unrelated consumers (data synthesis, model init, recovery inits...)
    off each other's streams even when they share one top-level seed.
    """
    _, out = _splitmix64((seed ^ _fnv1a64(purpose)) & _M64)
    return out


class Rng:
    """xoshiro256++ stream addressed by (seed, stream_id).

    Identical (seed, stream_id, call sequence) yields identical output
    everywhere; distinct stream_ids give statistically independent streams.
    """

    __slots__ = ("seed", "stream_id", "_s", "_spare")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = seed & _M64
        self.stream_id = stream_id & _M64
        sm = (self.seed ^ ((self.stream_id + 1) * _GOLDEN)) & _M64
        state = []
        for _ in range(4):
            sm, word = _splitmix64(sm)
            state.append(word)
        if not any(state):  # all-zero state is the one forbidden xoshiro state
            state[0] = 1
        self._s = state
        self._spare: float | None = None

    def substream(self, stream_id: int) -> "Rng":
        """Fresh stream with the same seed and the given stream id."""
        return Rng(self.seed, stream_id)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        x = (s0 + s3) & _M64
        out = ((((x << 23) & _M64) | (x >> 41)) + s0) & _M64
        t = (s1 << 17) & _M64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) & _M64) | (s3 >> 19)
        self._s = [s0, s1, s2, s3]
        return out

    def uniform(self) -> float:
        """Uniform in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * _INV_2_53

    def randbelow(self, n: int) -> int:
        """Integer in [0, n). Multiply-shift map; bias is O(n / 2^64)."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        return (self.next_u64() * n) >> 64

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> np.ndarray:
        idx = list(range(n))
        self.shuffle(idx)
        return np.asarray(idx, dtype=np.intp)

    def normal(self) -> float:
        """Standard normal draw (Box-Muller, second variate cached)."""
        if self._spare is not None:
            z = self._spare
            self._spare = None
            return z
        # u1 in (0, 1] so the log is finite; u2 in [0, 1).
        u1 = ((self.next_u64() >> 11) + 1) * _INV_2_53
        u2 = (self.next_u64() >> 11) * _INV_2_53
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare = r * math.sin(theta)
        return r * math.cos(theta)

    def normals(self, *shape: int) -> np.ndarray:
        """Array of standard normals; consumes the stream exactly like
        ``prod(shape)`` successive ``normal()`` calls."""
        n = 1
        for s in shape:
            n *= int(s)
        out = np.empty(n, dtype=np.float64)
        i = 0
        if self._spare is not None and n > 0:
            out[0] = self._spare
            self._spare = None
            i = 1
        pairs = (n - i + 1) // 2
        if pairs:
            raw = self._u64_block(2 * pairs)
            u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
            u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * _INV_2_53
            r = np.sqrt(-2.0 * np.log(u1))
            theta = (2.0 * np.pi) * u2
            z = np.empty(2 * pairs, dtype=np.float64)
            z[0::2] = r * np.cos(theta)
            z[1::2] = r * np.sin(theta)
            take = n - i
            out[i:] = z[:take]
            if take < 2 * pairs:
                self._spare = float(z[take])
        return out.reshape(shape) if shape else out[()]

    def uniforms(self, *shape: int) -> np.ndarray:
        n = 1
        for s in shape:
            n *= int(s)
        raw = self._u64_block(n)
        out = (raw >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return out.reshape(shape)

    def _u64_block(self, n: int) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        vals = []
        append = vals.append
        for _ in range(n):
            x = (s0 + s3) & _M64
            append(((((x << 23) & _M64) | (x >> 41)) + s0) & _M64)
            t = (s1 << 17) & _M64
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) & _M64) | (s3 >> 19)
        self._s = [s0, s1, s2, s3]
        return np.array(vals, dtype=np.uint64)
