import zlib
from typing import Sequence, Tuple, Union

import numpy as np

from app.exceptions import ConfigError

_SEED_LIMIT = 2 ** 64

Shape = Union[int, Sequence[int]]


class RngStream:
    """
    Counter-based random stream.

    Every draw builds a fresh PCG64 generator keyed by (seed, counter) and then
    advances the counter by one, so a stream restored from the same
    (seed, counter) pair replays the same draws on any platform.
    """

    def __init__(self, seed: int, counter: int = 0):
        if not 0 <= int(seed) < _SEED_LIMIT:
            raise ConfigError(f"seed must be in [0, 2**64), got {seed}")
        if counter < 0:
            raise ConfigError(f"counter must be non-negative, got {counter}")
        self.seed = int(seed)
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, counter={self.counter})"

    @property
    def state(self) -> Tuple[int, int]:
        return self.seed, self.counter

    def _next_generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence([self.seed, self.counter])
        self.counter += 1
        return np.random.Generator(np.random.PCG64(sequence))

    def uniform(self, shape: Shape = ()) -> np.ndarray:
        """Floats in [0, 1)."""
        return self._next_generator().random(shape)

    def bernoulli(self, prob_one: Union[float, np.ndarray], shape: Shape = ()) -> np.ndarray:
        """Boolean draws that are True with probability `prob_one` (broadcast over `shape`)."""
        return self.uniform(shape) < prob_one

    def permutation(self, n: int) -> np.ndarray:
        return self._next_generator().permutation(n)

    def normal(self, shape: Shape = (), scale: float = 1.0) -> np.ndarray:
        return self._next_generator().normal(0.0, scale, shape)

    def spawn(self, tag: str) -> "RngStream":
        """Derive an independent child stream; consumes one tick of this stream."""
        sequence = np.random.SeedSequence([self.seed, self.counter, zlib.crc32(tag.encode("utf-8"))])
        self.counter += 1
        low, high = sequence.generate_state(2, dtype=np.uint32)
        return RngStream((int(high) << 32) | int(low))
