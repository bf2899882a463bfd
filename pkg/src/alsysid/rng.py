"""Named, independent random streams derived from one base seed.

Each stream is a counter-based Philox generator keyed by ``(seed, name)``,
so consuming draws from one stream never shifts another.  This is what
keeps the passive start of every strategy identical at a given seed.
"""
import zlib

import numpy as np

NOISE = "noise"
PASSIVE = "passive-inputs"
INIT = "init-weights"
TEST = "test-set"
COMMITTEE = "committee"


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), key])))
