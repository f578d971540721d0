"""Seed splitting.

Every random consumer asks for ``stream(seed, *keys)``; the keys are hashed
into the ``spawn_key`` of a :class:`numpy.random.SeedSequence`, so streams are
independent of the order in which they are requested.
"""

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))


def stream(seed: int, *keys) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))
