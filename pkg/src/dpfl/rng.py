"""Named random streams.

Every random draw in a run comes from a stream keyed by
``(seed, purpose_label, *ids)``.  The key is turned into a
:class:`numpy.random.SeedSequence` entropy list
``[seed, crc32(label), id_0, id_1, ...]`` so that streams for different
clients/rounds are independent and can be consumed in any order or thread.
"""
from __future__ import annotations

import zlib

import numpy as np

_U64 = (1 << 64) - 1


def label_code(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream(seed: int, label: str, *ids: int) -> np.random.Generator:
    """Return a fresh generator for ``(seed, label, *ids)``."""
    entropy = [int(seed) & _U64, label_code(label)]
    for i in ids:
        if i < 0:
            raise ValueError(f"stream ids must be nonnegative, got {i}")
        entropy.append(int(i))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
