"""Counter-based random streams (Philox) for reproducible draws."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass
class RngStream:
    """A (seed, counter) pair that fully determines the draw sequence.

    Each call to :meth:`generator` hands out a Philox generator keyed by the
    seed at the current counter, then advances the counter, so consecutive
    consumers never share draws and replaying the same pair replays them.
    """

    seed: int
    counter: int = 0

    def generator(self) -> np.random.Generator:
        bitgen = np.random.Philox(key=self.seed & _MASK64,
                                  counter=[self.counter & _MASK64, 0, 0, 0])
        self.counter += 1
        return np.random.Generator(bitgen)

    def spawn(self, index: int) -> "RngStream":
        """Independent child stream, e.g. one per worker or per episode."""
        mixed = np.random.SeedSequence([self.seed & _MASK64, index]).generate_state(2, np.uint64)
        return RngStream(int(mixed[0]), 0)

    def gumbel(self, shape) -> np.ndarray:
        return self.generator().gumbel(size=shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self.generator().normal(0.0, scale, size=shape)
