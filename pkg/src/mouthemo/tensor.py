"""Numeric substrate: float64 ndarrays plus a pinned, seedable generator.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in row-major
(C) order; activations use the N x C x H x W convention.

The generator is SplitMix64 (Steele, Lea & Flood 2014): a Weyl sequence
``state += 0x9E3779B97F4A7C15`` whose value is passed through two
xorshift-multiply rounds and a final xorshift. Because the i-th output only
depends on ``seed + i * gamma`` the stream can be produced in vectorised
blocks while staying bit-identical to the scalar definition.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def tensor_new(dims, fill=0.0):
    """Return a float64 array of shape ``dims`` filled with ``fill``."""
    dims = tuple(dims)
    if not dims or len(dims) > 4:
        raise ShapeError(f"tensor rank must be 1..4, got dims={dims!r}")
    if any(int(d) != d or d < 1 for d in dims):
        raise ShapeError(f"tensor dims must be positive integers, got {dims!r}")
    return np.full(tuple(int(d) for d in dims), float(fill), dtype=np.float64)


def matmul(a, b):
    """Matrix product of two rank-2 tensors (M x K) @ (K x N)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    return a @ b


def check_finite(x, what="tensor"):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains NaN or Inf")
    return x


class SeededRng:
    """SplitMix64 stream. Equal seeds give bitwise-equal streams."""

    def __init__(self, seed=1234):
        self.state = int(seed) & _MASK64

    def next_u64(self, n):
        """Return the next ``n`` raw 64-bit outputs as a uint64 array."""
        n = int(n)
        if n < 0:
            raise ValueError("n must be >= 0")
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _GAMMA
            z = (z ^ (z >> np.uint64(30))) * _MIX1
            z = (z ^ (z >> np.uint64(27))) * _MIX2
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * int(_GAMMA)) & _MASK64
        return z

    def uniform(self, n):
        """``n`` doubles in [0, 1) built from the top 53 bits of each output."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)

    def normal(self, n):
        """``n`` standard normals by Box-Muller; pairs are drawn, the spare is dropped."""
        n = int(n)
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n]

    def shuffle(self, items):
        """Fisher-Yates shuffle; returns a new list and leaves ``items`` alone."""
        out = list(items)
        n = len(out)
        if n < 2:
            return out
        u = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            out[i], out[j] = out[j], out[i]
        return out

    def permutation(self, n):
        return np.array(self.shuffle(range(n)), dtype=np.int64)


def rng_uniform(rng, n):
    return rng.uniform(n)


def rng_normal(rng, n):
    return rng.normal(n)


def rng_shuffle(rng, items):
    return rng.shuffle(items)
