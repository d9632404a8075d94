"""Reproducible Gaussian noise for Monte Carlo over independent samples.

Each sample owns a Philox stream keyed by ``(seed, sample_index)``; within a
sample, the draw for step ``n`` and component ``c`` is the ``2n + c``-th normal
of that stream.  Samples can therefore be generated in any order, by any
number of workers, with bit-identical results.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

_MASK64 = (1 << 64) - 1


class NormalStream:
    components = 2

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64

    def generator(self, sample: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[self.seed, int(sample) & _MASK64]))

    def normals(self, samples: Iterable[int], n_steps: int) -> np.ndarray:
        """Standard normals of shape ``(len(samples), n_steps, 2)``."""
        samples = list(samples)
        out = np.empty((len(samples), n_steps, self.components))
        for row, s in enumerate(samples):
            self.generator(s).standard_normal(out=out[row].reshape(-1))
        return out

    def normals_time_major(self, samples: Iterable[int], n_steps: int, block: int = 16) -> np.ndarray:
        """Same draws as :meth:`normals`, laid out as ``(2, n_steps, len(samples))``."""
        samples = list(samples)
        out = np.empty((self.components, n_steps, len(samples)))
        for a in range(0, len(samples), block):
            chunk = self.normals(samples[a:a + block], n_steps)
            out[:, :, a:a + block] = chunk.transpose(2, 1, 0)
        return out

    def __repr__(self):
        return f"NormalStream(seed={self.seed})"


class ZeroStream(NormalStream):
    """All draws are zero: isolates the deterministic part of every recursion."""

    def __init__(self):
        super().__init__(0)

    def normals(self, samples, n_steps):
        return np.zeros((len(list(samples)), n_steps, self.components))

    def normals_time_major(self, samples, n_steps, block=16):
        return np.zeros((self.components, n_steps, len(list(samples))))
