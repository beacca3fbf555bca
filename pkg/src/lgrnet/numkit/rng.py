"""Seeded random streams.

All randomness goes through :class:`Rng`, a thin wrapper around numpy's
Philox4x64-10 counter-based bit generator.  Philox output depends only on
(key, counter), so a seed fixes every stream bit-for-bit independent of
thread count.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

ALGORITHM = "philox4x64-10"


class Rng:
    def __init__(self, seed: int):
        self.seed = int(seed) & (2**64 - 1)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def spawn(self, stream: int) -> "Rng":
        """Independent child stream, keyed by ``(seed, stream)``."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        ss = np.random.SeedSequence([self.seed, int(stream)])
        child._gen = np.random.Generator(np.random.Philox(ss))
        return child

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, std, size=shape)

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        return self._gen.uniform(lo, hi, size=shape)

    def integers(self, lo: int, hi: int, shape=None):
        return self._gen.integers(lo, hi, size=shape)

    def truncated_normal(self, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
        """Normal samples redrawn until they fall within ``bound`` std devs."""
        out = self._gen.normal(0.0, 1.0, size=shape)
        bad = np.abs(out) > bound
        while bad.any():
            out[bad] = self._gen.normal(0.0, 1.0, size=int(bad.sum()))
            bad = np.abs(out) > bound
        return out * std

    def param(self, shape, std: float = 0.02, name: str | None = None) -> Tensor:
        return Tensor(self.truncated_normal(shape, std), requires_grad=True, name=name)
