"""Counter-based random streams keyed by (seed, purpose, index).

Each stream is Philox4x64-10 (numpy's ``Philox``) with key
``(seed, fnv1a64(purpose))`` and starting counter ``(0, 0, index, 0)``; numpy
increments the counter before each block, so the first block encrypts
``(1, 0, index, 0)``. Streams for different indices never overlap within
2**128 blocks, so sample ``k`` of a run draws the same numbers whatever the
run length (the prefix property the experiments rely on).

Uniforms are ``(raw >> 11) * 2**-53``; normals come in Box-Muller pairs from
two uniforms ``u1 = ((raw1 >> 11) + 1) * 2**-53`` (never 0) and ``u2``:
``sqrt(-2 ln u1) * (cos 2 pi u2, sin 2 pi u2)``.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


class Stream:
    def __init__(self, seed: int, purpose: str, index: int):
        key = np.array([check_seed(seed), fnv1a64(purpose)], dtype=np.uint64)
        counter = np.array([0, 0, int(index), 0], dtype=np.uint64)
        self._bits = np.random.Philox(key=key, counter=counter)

    def raw(self, n: int) -> np.ndarray:
        return self._bits.random_raw(n)

    def uniforms(self, n: int) -> np.ndarray:
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def normals(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        raw = self.raw(2 * pairs) >> np.uint64(11)
        u1 = (raw[0::2].astype(np.float64) + 1.0) * 2.0 ** -53
        u2 = raw[1::2].astype(np.float64) * 2.0 ** -53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n]
