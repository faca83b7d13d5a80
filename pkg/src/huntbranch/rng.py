"""Reproducible random streams.

Every replicate gets its own PCG64 generator keyed by ``(master seed,
replicate index, *path)`` through :class:`numpy.random.SeedSequence`, so a
replicate's draws never depend on which worker ran it or in what order.
"""

from __future__ import annotations

import math

import numpy as np

GENERATOR_NAME = "numpy.random.PCG64(SeedSequence(entropy=master_seed, spawn_key=(replicate, *path)))"

__all__ = ["GENERATOR_NAME", "UniformStream", "stream"]


def stream(master_seed: int, replicate: int = 0, *path: int) -> np.random.Generator:
    if master_seed is None:
        raise ValueError("a master seed is required for reproducible streams")
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(replicate), *map(int, path)))
    return np.random.Generator(np.random.PCG64(ss))


class UniformStream:
    """Block-buffered U[0, 1) draws from a numpy Generator.

    Pulling scalars one at a time from a Generator dominates the cost of the
    event loop; buffering keeps the draw sequence identical to
    ``gen.random(n)`` for any ``n``.
    """

    __slots__ = ("gen", "block", "_buf", "_i")

    def __init__(self, gen: np.random.Generator, block: int = 4096):
        self.gen = gen
        self.block = block
        self._buf: list[float] = []
        self._i = 0

    def uniform(self) -> float:
        if self._i >= len(self._buf):
            self._buf = self.gen.random(self.block).tolist()
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return u

    def exponential(self, rate: float) -> float:
        return -math.log1p(-self.uniform()) / rate
