"""Deterministic hierarchical random streams.

Every stochastic choice in the package (temporal sampling, pixel ops, batch
shuffling, data generation) draws from an RngStream derived from the run seed
plus a tuple of integer ids. Identical (seed, stream) pairs always produce
identical draw sequences, so augmented windows can be rebuilt bit-exactly and
checkpoint resume needs no serialized generator state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """A named, replayable random stream: (seed, stream id) -> generator."""

    seed: int
    stream: tuple[int, ...] = field(default_factory=tuple)

    def child(self, *ids: int) -> "RngStream":
        """Derive a sub-stream; children with distinct ids are independent."""
        return RngStream(self.seed, self.stream + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        return np.random.default_rng((int(self.seed),) + self.stream)
