"""Named, reproducible random streams.

Every stream is a numpy ``Generator`` backed by PCG64 (O'Neill, 2014), which
numpy guarantees to produce the same sequence on every platform for a given
``SeedSequence``. A run seed fans out into independent sub-streams keyed by
name, so adding draws to one component never shifts another.
"""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("scene", "sampling", "init", "classifier")


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    key = (zlib.crc32(name.encode("ascii")),) + tuple(int(e) for e in extra)
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))
