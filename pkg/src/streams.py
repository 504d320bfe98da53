"""Counter-based random streams.

A RandomStream is keyed by a 64-bit seed. Each simulation block gets its own
Philox generator keyed by (seed, block index); the Philox counter advances with
every draw, so the same (seed, block) always replays the same sequence no
matter which worker runs it or in what order.
"""
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RandomStream:
    """Reproducible family of generators keyed by (seed, index)"""

    seed: int

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _MASK64:
            raise ValueError(f"Seed must fit in 64 bits, got {self.seed}")

    def generator(self, index: int = 0) -> np.random.Generator:
        """
        Generator for one block (or one standalone task)

        Args:
            index: Block or task index, any nonnegative 64-bit integer

        Returns:
            numpy Generator backed by Philox with key (seed, index)
        """
        key = np.array([int(self.seed) & _MASK64, int(index) & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, label: int) -> 'RandomStream':
        """Independent stream for a sub-experiment, derived through SeedSequence"""
        derived = np.random.SeedSequence([int(self.seed) & _MASK64, int(label)]).generate_state(2, dtype=np.uint64)
        return RandomStream(int(derived[0]))
