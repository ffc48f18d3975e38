"""Seeded random streams.

Every random draw in the package comes from a Philox generator (a
counter-based generator with a published algorithm) keyed by a 64-bit seed
and a tuple of stream indices. The same ``(seed, stream)`` pair yields the
same sequence on every platform, which is what makes parallel and chunked
work reproducible: a worker never shares a stream with another worker.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngSpec:
    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed <= MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.stream < 0:
            raise ValueError("stream must be non-negative")

    def generator(self, *keys: int) -> np.random.Generator:
        """Generator for this seed and stream, optionally narrowed to a sub-stream."""
        return make_generator(self.seed, self.stream, *keys)


def make_generator(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & MASK64, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit child seed, used to seed whole synthetic datasets."""
    ss = np.random.SeedSequence(entropy=int(seed) & MASK64, spawn_key=tuple(int(k) for k in keys))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)
