"""Entity-wise average of residual ranks.

Per iteration the trainer samples ``k x k`` patches, ranks the residuals of
every sampled pixel jointly, averages the normalized ranks over each entity
inside each patch and excludes (``D = 0``) thing entities whose average
exceeds the threshold. Stuff entities and unassigned pixels are always kept;
the exclusion region is finally grown by a 3x3 dilation inside each patch.

Batch pixel order is patch-major, then row, then column, so a flat batch
array reshapes to ``(patches, k, k)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .imgcore import dilate3x3
from .scene_sim import UNASSIGNED


@dataclass(frozen=True)
class EarrConfig:
    k: int = 64
    threshold: float = 0.8
    dilation_enabled: bool = True

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("patch size k must be >= 2")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")


@dataclass(frozen=True)
class PatchBatch:
    frames: np.ndarray  # (P,) frame index per patch
    origins: np.ndarray  # (P, 2) top-left (x, y)
    k: int

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def pixel_count(self) -> int:
        return len(self) * self.k * self.k

    def coords(self) -> np.ndarray:
        """(N, 2) pixel coordinates ``(x, y)`` in batch order."""
        yy, xx = np.mgrid[0 : self.k, 0 : self.k]
        x = self.origins[:, 0, None, None] + xx[None]
        y = self.origins[:, 1, None, None] + yy[None]
        return np.stack([x.ravel(), y.ravel()], axis=1)

    def pixel_frames(self) -> np.ndarray:
        return np.repeat(self.frames, self.k * self.k)

    def gather(self, stack: np.ndarray) -> np.ndarray:
        """Pick batch pixels out of a per-frame stack ``(F, H, W, ...)``; keeps patch layout."""
        c = self.coords()
        out = stack[self.pixel_frames(), c[:, 1], c[:, 0]]
        return out.reshape((len(self), self.k, self.k) + stack.shape[3:])


@dataclass(frozen=True)
class EntityClusterStats:
    patch: int
    entity: int
    pixels: np.ndarray  # flat batch indices of S(e) within this patch
    mean_rank: float

    @property
    def count(self) -> int:
        return len(self.pixels)


def sample_patches(rng: np.random.Generator, width: int, height: int, frame_count: int,
                   k: int, patch_count: int) -> PatchBatch:
    if k > min(width, height):
        raise ValueError(f"patch size {k} exceeds frame size {width}x{height}")
    if patch_count < 1:
        raise ValueError("patch_count must be >= 1")
    frames = np.empty(patch_count, dtype=np.int64)
    origins = np.empty((patch_count, 2), dtype=np.int64)
    for p in range(patch_count):
        frames[p] = rng.integers(0, frame_count)
        origins[p, 0] = rng.integers(0, width - k + 1)
        origins[p, 1] = rng.integers(0, height - k + 1)
    return PatchBatch(frames, origins, k)


def patches_per_batch(batch_pixels: int, k: int) -> int:
    if batch_pixels <= 0 or batch_pixels % (k * k):
        raise ValueError(f"batch of {batch_pixels} pixels is not a positive multiple of {k}x{k}")
    return batch_pixels // (k * k)


def rank_normalize(residuals) -> np.ndarray:
    """Midranks mapped to [0, 1] by ``(R - 1) / (N - 1)``.

    Ties share the mean of their ordinal positions, so a fully tied batch maps
    to 0.5 everywhere. A single pixel maps to 0.
    """
    e = np.asarray(residuals, dtype=np.float64).ravel()
    if np.isnan(e).any():
        raise ValueError("NaN residual")
    n = e.size
    if n == 0:
        raise ValueError("empty residual batch")
    if n == 1:
        return np.zeros(1)
    order = np.argsort(e, kind="stable")
    s = e[order]
    starts = np.r_[True, s[1:] != s[:-1]]
    first = np.flatnonzero(starts)
    counts = np.diff(np.r_[first, n])
    midrank = first + (counts - 1) / 2.0 + 1.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(midrank, counts)
    return (ranks - 1.0) / (n - 1)


def cluster_patches(ranks: np.ndarray, ids: np.ndarray) -> list[EntityClusterStats]:
    """Average ranks per (patch, entity); ``ranks`` and ``ids`` are ``(P, k, k)``."""
    ranks = np.asarray(ranks, dtype=np.float64)
    ids = np.asarray(ids)
    if ranks.shape != ids.shape or ranks.ndim != 3:
        raise ValueError("ranks and ids must both be shaped (patches, k, k)")
    per = ids.shape[1] * ids.shape[2]
    out = []
    for p in range(ids.shape[0]):
        flat_ids = ids[p].ravel()
        flat_r = ranks[p].ravel()
        uniq, inv = np.unique(flat_ids, return_inverse=True)
        inv = inv.ravel()
        for j, e in enumerate(uniq):
            if e == UNASSIGNED:
                continue
            members = np.flatnonzero(inv == j)
            mean = float(flat_r[members].sum() / members.size)
            out.append(EntityClusterStats(p, int(e), members + p * per, mean))
    return out


def entity_cluster_average(ranks, entity_maps: np.ndarray, batch: PatchBatch) -> list[EntityClusterStats]:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size != batch.pixel_count:
        raise ValueError("ranks do not cover the batch pixels")
    ids = batch.gather(entity_maps)
    return cluster_patches(ranks.reshape(ids.shape), ids)


def label_distractors(stats: list[EntityClusterStats], stuff_flags: Mapping[tuple[int, int], int],
                      cfg: EarrConfig, batch_shape: tuple[int, int, int]) -> np.ndarray:
    """Per-pixel ``D`` in batch order (uint8, 1 = keep).

    ``stuff_flags`` maps ``(patch, entity)`` to s(r): 1 for stuff, 0 for thing.
    """
    n_patches, kh, kw = batch_shape
    d = np.ones(n_patches * kh * kw, dtype=np.uint8)
    for c in stats:
        try:
            s = stuff_flags[(c.patch, c.entity)]
        except KeyError:
            raise ValueError(f"no stuff flag for entity {c.entity} in patch {c.patch}") from None
        if not s and c.mean_rank > cfg.threshold:
            d[c.pixels] = 0
    if cfg.dilation_enabled:
        d3 = d.reshape(batch_shape)
        for p in range(n_patches):
            grown = dilate3x3(d3[p] == 0)
            d3[p][grown] = 0
    return d


def all_thing(stats: list[EntityClusterStats]) -> dict[tuple[int, int], int]:
    return {(c.patch, c.entity): 0 for c in stats}
