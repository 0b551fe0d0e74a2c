"""Flat binary checkpoint container.

Layout: ``uint32`` little-endian header length, UTF-8 JSON header, then every
array listed in ``header["arrays"]`` as little-endian ``float32`` in order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_LE_F32 = np.dtype("<f4")


def write(path: str | Path, header: dict, arrays: list[np.ndarray]) -> None:
    header = dict(header)
    header["arrays"] = [list(a.shape) for a in arrays]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=_LE_F32).tobytes())


def read(path: str | Path) -> tuple[dict, list[np.ndarray]]:
    raw = Path(path).read_bytes()
    (n,) = struct.unpack_from("<I", raw, 0)
    header = json.loads(raw[4 : 4 + n].decode("utf-8"))
    offset = 4 + n
    arrays = []
    for shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(raw, dtype=_LE_F32, count=count, offset=offset)
        arrays.append(a.astype(np.float64).reshape(shape))
        offset += count * 4
    if offset != len(raw):
        raise ValueError(f"{path}: {len(raw) - offset} trailing bytes in checkpoint")
    return header, arrays


def to_f32(a: np.ndarray) -> np.ndarray:
    """Round to the precision a checkpoint stores."""
    return np.asarray(a, dtype=np.float64).astype(_LE_F32).astype(np.float64)
