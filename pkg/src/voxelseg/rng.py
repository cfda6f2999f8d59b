"""Seeded random streams with splittable substreams.

PCG64 seeded through ``numpy.random.SeedSequence`` gives the same draw
sequence on every platform, and spawn keys give independent child streams
that are themselves reproducible from (seed, spawn_key).
"""

from __future__ import annotations

import numpy as np


class RngStream:
    """A named, portable random stream.

    Identical (seed, spawn_key) plus an identical call sequence produce
    identical outputs everywhere. ``split`` derives independent substreams
    without consuming draws from the parent generator.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int, spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        self._seq = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def split(self, n: int) -> list["RngStream"]:
        """Derive n independent child streams; repeated calls give fresh ones."""
        return [RngStream(self.seed, child.spawn_key) for child in self._seq.spawn(n)]

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, spawn_key={self.spawn_key})"
