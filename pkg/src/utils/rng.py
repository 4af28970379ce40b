from enum import Enum
from typing import Dict

import numpy as np


class Stream(int, Enum):
    """Independent randomness purposes derived from one master seed"""

    TOPOLOGY = 1
    GROUPS = 2
    SHARES = 3
    TOKEN = 4
    ADVERSARY = 5
    ORIGIN = 6
    PAYLOAD = 7
    ESTIMATOR = 9
    BACKOFF = 10


def stream(master_seed: int, purpose: Stream) -> np.random.Generator:
    """Counter-based Philox generator keyed by (master seed, purpose)"""
    seq = np.random.SeedSequence(master_seed, spawn_key=(int(purpose),))
    return np.random.Generator(np.random.Philox(seq))


class RngStreams:
    """Lazily created per-purpose generators for one run"""

    def __init__(self, master_seed: int):
        self.master_seed = master_seed
        self._streams: Dict[Stream, np.random.Generator] = {}

    def __getitem__(self, purpose: Stream) -> np.random.Generator:
        if purpose not in self._streams:
            self._streams[purpose] = stream(self.master_seed, purpose)
        return self._streams[purpose]
