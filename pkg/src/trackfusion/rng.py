"""Seeded random streams.

Every random draw in the package comes from a named stream so that a run is
fully determined by ``(seed, stream name)``. Uniforms come from numpy's PCG64;
standard normals are produced from those uniforms with the Box-Muller
transform::

    u1, u2 ~ U(0, 1]   (u1 = 1 - U[0, 1) so log never sees 0)
    z0 = sqrt(-2 ln u1) * cos(2 pi u2)
    z1 = sqrt(-2 ln u1) * sin(2 pi u2)

Pairs are emitted interleaved (z0, z1, z0, z1, ...) and truncated to the
requested count.
"""
from __future__ import annotations

import zlib

import numpy as np

INIT_SCALE = 0.08


class Stream:
    """A named, seedable source of uniform and Gaussian draws."""

    def __init__(self, seed: int, name: str = ""):
        self.seed = int(seed)
        self.name = name
        self._gen = np.random.Generator(np.random.PCG64([self.seed, zlib.crc32(name.encode())]))

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return low + (high - low) * self._gen.random(shape)

    def normal(self, shape=()) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        pairs = (n + 1) // 2
        u1 = 1.0 - self._gen.random(pairs)
        u2 = self._gen.random(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        return z[:n].reshape(shape)

    def integers(self, high: int, size=None):
        return self._gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def child(self, name: str) -> "Stream":
        return Stream(self.seed, f"{self.name}/{name}")


def init_tensor(seed: int, name: str, shape, scale: float = INIT_SCALE) -> np.ndarray:
    """Uniform init in [-scale, scale] drawn from a stream named after the tensor."""
    return Stream(seed, "init:" + name).uniform(shape, -scale, scale)
