"""Deterministic 64-bit PRNG with derivable substreams.

The generator is splitmix64: state advances by the golden-gamma constant
and each output is the finalizer mix of the new state. It is counter-based,
so a block of outputs can be produced vectorized without changing the
sequence. Every randomized component of the package (weight init, epoch
shuffling, synthetic data) draws from a substream derived from one base
seed plus string/int tags, never from global state, which is what makes
whole runs bit-reproducible.

Gaussians use the Box-Muller transform: each normal consumes two uniforms
u1, u2 and returns sqrt(-2 ln(1 - u1)) * cos(2 pi u2). The second member
of the pair is discarded so stream consumption stays one-normal-per-two-
uniforms regardless of call batching.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return h


def derive(seed: int, *tags: str | int) -> int:
    """Derive a substream seed from a base seed and purpose tags.

    Each tag (a string hashed with FNV-1a, or an int taken mod 2^64) is
    folded into the state with one splitmix advance, so distinct tag
    sequences give statistically independent streams.
    """
    h = _mix64(seed & _MASK)
    for tag in tags:
        t = _fnv1a64(tag.encode("utf-8")) if isinstance(tag, str) else tag & _MASK
        h = _mix64((h + _GAMMA) ^ t)
    return h


class SplitMix64:
    """Sequential splitmix64 stream seeded from a 64-bit integer."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_uint64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return _mix64(self._state)

    def uint64(self, n: int) -> np.ndarray:
        """Next ``n`` raw outputs, computed counter-style in one shot."""
        with np.errstate(over="ignore"):
            z = np.uint64(self._state) + np.uint64(_GAMMA) * np.arange(
                1, n + 1, dtype=np.uint64
            )
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        self._state = (self._state + n * _GAMMA) & _MASK
        return z

    def float64(self, n: int) -> np.ndarray:
        """Next ``n`` doubles uniform on [0, 1), 53-bit resolution."""
        return (self.uint64(n) >> np.uint64(11)) * 2.0**-53

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        size = int(np.prod(shape))
        return (low + (high - low) * self.float64(size)).reshape(shape)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        size = int(np.prod(shape))
        u1 = self.float64(size)
        u2 = self.float64(size)
        z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        return (std * z).reshape(shape)

    def shuffled_indices(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n) driven by this stream."""
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.next_uint64() % (i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx
