"""Portable deterministic random streams for synthetic data generation.

The generator is SplitMix64 (Vigna's public-domain mixer): 64-bit state
advanced by the golden-gamma constant, one avalanche per output.  Because the
state after k steps is simply ``seed + k * GOLDEN`` mod 2**64, whole blocks of
outputs can be produced vectorized without changing the stream.

Substreams are derived from a (seed, tag) pair via FNV-1a 64 over the tag, so
every tensor a generator touches gets its own independent stream and the same
seed reproduces identical bytes regardless of generation order.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

# 2**-53; uniforms are ((u >> 11) + 1) * 2**-53, i.e. in (0, 1].
_U53 = 1.0 / (1 << 53)


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash (offset 0xcbf29ce484222325, prime 0x100000001b3)."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix_block(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps mod 2**64, matching the scalar path.
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """SplitMix64 stream: state(k) = seed + k * 0x9E3779B97F4A7C15 mod 2**64."""

    def __init__(self, seed: int):
        self._seed = seed & _MASK64
        self._count = 0

    @property
    def seed(self) -> int:
        return self._seed

    def next_u64(self) -> int:
        self._count += 1
        return _mix((self._seed + self._count * _GOLDEN) & _MASK64)

    def u64_block(self, n: int) -> np.ndarray:
        ks = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            states = np.uint64(self._seed) + ks * np.uint64(_GOLDEN)
            return _mix_block(states)

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles in (0, 1], 53-bit resolution."""
        bits = self.u64_block(n) >> np.uint64(11)
        return (bits.astype(np.float64) + 1.0) * _U53

    def next_float(self) -> float:
        return ((self.next_u64() >> 11) + 1) * _U53

    def normals(self, n: int) -> np.ndarray:
        """n standard-normal doubles via Box-Muller on consecutive uniform pairs."""
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers in [0, bound) by modulo reduction (bias < bound/2**64)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (self.u64_block(n) % np.uint64(bound)).astype(np.int64)

    def unit_vector(self, dim: int) -> np.ndarray:
        """Uniform random direction on the (dim-1)-sphere."""
        v = self.normals(dim)
        norm = float(np.linalg.norm(v))
        if norm == 0.0:  # probability ~0, but keep the output well-defined
            v = np.zeros(dim)
            v[0] = 1.0
            return v
        return v / norm


def substream(seed: int, tag: str) -> SplitMix64:
    """Independent stream for (seed, tag); same pair always yields same stream."""
    return SplitMix64((seed & _MASK64) ^ fnv1a64(tag.encode("utf-8")))
