"""Counter-based random substreams: one root seed, one Philox stream per (iteration, block).

The Philox key comes from the root seed; the (iteration, block) pair is written
into the high words of the 256-bit counter, so substreams are addressed
directly instead of being spawned in sequence.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# блок 0: управляющий поток итерации (монетка beta, выбор индекса),
# блоки 1..: предложения
CONTROL_BLOCK = 0


@dataclass(frozen=True)
class RandomStreams:
    """Substream factory.

    Proposal block b of iteration k is drawn from the same stream no matter
    which worker evaluates it, so traces do not depend on the worker count.
    """

    seed: int
    prefix: tuple[int, ...] = ()
    _key: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        ss = np.random.SeedSequence(self.seed, spawn_key=self.prefix)
        object.__setattr__(self, "_key", ss.generate_state(2, dtype=np.uint64))

    def generator(self, k: int, j: int) -> np.random.Generator:
        counter = np.array([0, 0, j, k], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=self._key))

    def control(self, k: int) -> np.random.Generator:
        return self.generator(k, CONTROL_BLOCK)

    def block(self, k: int, b: int) -> np.random.Generator:
        return self.generator(k, CONTROL_BLOCK + 1 + b)

    def initial(self) -> np.random.Generator:
        """Stream for the starting state; chain iterations are numbered from 1."""
        return self.generator(0, CONTROL_BLOCK)

    def child(self, index: int) -> RandomStreams:
        """Independent family for run `index` of a campaign."""
        return RandomStreams(self.seed, self.prefix + (index,))
