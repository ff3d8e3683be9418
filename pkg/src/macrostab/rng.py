"""Seed plumbing: one SeedSequence tree per experiment, buffered uniform rows per stream."""
from __future__ import annotations

import numpy as np

PARTICLES, INIT, TRACKER, AUX = 0, 1, 2, 3


def seed_sequence(seed: int, *key: int) -> np.random.SeedSequence:
    """Deterministic child of ``seed`` addressed by an integer path, independent of sibling count."""
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if seed is None:
        return np.random.SeedSequence()
    return np.random.SeedSequence(int(seed))


def substream(ss: np.random.SeedSequence, which: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (which,))


class UniformStream:
    """Rows of ``width`` uniforms, refilled in growing blocks.

    numpy's generators fill arrays sequentially, so the row sequence does not depend on
    the block sizes used.
    """

    def __init__(self, ss: np.random.SeedSequence, width: int = 4, block: int = 1024, max_block: int = 1 << 18):
        self.gen = np.random.Generator(np.random.PCG64(ss))
        self.width = width
        self.block = block
        self.max_block = max_block
        self.buf = np.empty((0, width))
        self.pos = 0

    def refill(self):
        rest = self.buf[self.pos:]
        new = self.gen.random((self.block, self.width))
        self.block = min(self.block * 2, self.max_block)
        self.buf = np.concatenate([rest, new]) if rest.shape[0] else new
        self.pos = 0

    def row(self) -> np.ndarray:
        if self.pos >= self.buf.shape[0]:
            self.refill()
        r = self.buf[self.pos]
        self.pos += 1
        return r
