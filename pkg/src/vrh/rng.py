"""Seed management.

Every random quantity is drawn from a Philox stream addressed by the master
seed plus a tuple of integer/string keys, e.g. ``stream(seed, "env", 3)``.
Streams for distinct key tuples are statistically independent, and the same
key tuple always reproduces the same numbers, regardless of the order in which
work items are scheduled.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (bool, np.bool_)):
        return int(k)
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError(f"stream keys must be non-negative, got {k}")
        return int(k)
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf8"))
    raise TypeError(f"unsupported stream key {k!r}")


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))


def stream(seed: int, *keys) -> np.random.Generator:
    """Independent counter-based generator for ``(seed, *keys)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *keys)))


def child_seed(seed: int, *keys) -> int:
    """Derive a 63-bit integer seed, for APIs that take plain integers."""
    return int(seed_sequence(seed, *keys).generate_state(2, np.uint32).view(np.uint64)[0] >> np.uint64(1))
