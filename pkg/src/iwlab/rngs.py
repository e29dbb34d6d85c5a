"""Named, independent random streams derived from one root seed.

Expanding a run's root seed into per-purpose streams (init, shuffle,
dropout, subsample, ...) keeps the streams decoupled: toggling dropout
cannot perturb batch order, and adding a seed to a sweep cannot change
any other seed's trace.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(root_seed: int, name: str) -> np.random.Generator:
    """A generator unique to (root_seed, name), stable across runs."""
    ss = np.random.SeedSequence(root_seed, spawn_key=(zlib.crc32(name.encode("utf-8")),))
    return np.random.default_rng(ss)


def derive_seed(root_seed: int, name: str) -> int:
    """A 32-bit integer seed unique to (root_seed, name)."""
    ss = np.random.SeedSequence(root_seed, spawn_key=(zlib.crc32(name.encode("utf-8")),))
    return int(ss.generate_state(1)[0])
