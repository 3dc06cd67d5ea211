"""
Seeded counter-based random number generation.

The generator is Philox-4x64 with 10 rounds, keyed directly by the 64-bit
seed (no seed hashing), so a stream is reproducible by any implementation of
the published algorithm. Round constants:
  multipliers 0xD2E7470EE14C6C93, 0xCA5A826395121157
  key bumps   0x9E3779B97F4A7C15, 0xBB67AE8584CAA73B
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

Shape = Union[int, Tuple[int, ...], Sequence[int]]

SEED_MASK = (1 << 64) - 1


class Rng:
    """
    Counter-based random stream.

    ``stream`` selects an independent counter block under the same key, which
    is how per-case and per-step streams are derived without global state.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & SEED_MASK
        self.stream = int(stream) & SEED_MASK
        counter = np.array([0, 0, 0, self.stream], dtype=np.uint64)
        self._bitgen = np.random.Philox(key=np.array([self.seed, 0], dtype=np.uint64), counter=counter)
        self._generator = np.random.Generator(self._bitgen)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream}, position={self.position})"

    @property
    def position(self) -> int:
        """Low word of the Philox counter: how many blocks were consumed."""
        return int(self._bitgen.state['state']['counter'][0])

    def derive(self, stream: int) -> 'Rng':
        """Independent stream under the same seed."""
        return Rng(self.seed, stream)

    def random(self, shape: Optional[Shape] = None) -> np.ndarray:
        """Uniform samples on [0, 1)."""
        return self._generator.random(shape)

    def open_uniform(self, shape: Optional[Shape] = None) -> np.ndarray:
        """Uniform samples on the open interval (0, 1)."""
        bits = self._generator.integers(0, 1 << 53, size=shape, dtype=np.int64)
        return (bits.astype(np.float64) + 0.5) / float(1 << 53)

    def uniform(self, low: float, high: float, shape: Optional[Shape] = None) -> np.ndarray:
        return low + (high - low) * self._generator.random(shape)

    def normal(self, shape: Optional[Shape] = None, scale: float = 1.0) -> np.ndarray:
        return self._generator.standard_normal(shape) * scale

    def integers(self, low: int, high: int, shape: Optional[Shape] = None) -> np.ndarray:
        """Integers on [low, high)."""
        return self._generator.integers(low, high, size=shape, dtype=np.int64)

    def bernoulli(self, probability: float) -> bool:
        return bool(self._generator.random() < probability)
