"""Derived random streams.

Every stochastic step draws from a generator keyed on (seed, *labels), so a
result never depends on which worker ran it or in what order.
"""
import zlib

import numpy as np


def _key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def derive_seed(seed: int, *labels) -> int:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(_key(x) for x in labels)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def derive_rng(seed: int, *labels) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(_key(x) for x in labels)])
    return np.random.default_rng(ss)
