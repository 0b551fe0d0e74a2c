"""Patch-statistics robust weighting, reconstructed as a baseline.

Three stages over a residual field whose sides are multiples of 8:

1. a pixel is an inlier iff its residual is at most the ``q``-quantile;
2. it stays an inlier iff at least ``s`` of its 3x3 neighborhood (clipped at
   the border) were stage-1 inliers;
3. each non-overlapping 8x8 patch is kept whole iff at least half of the
   16x16 window centered on it (clipped) is a stage-2 inlier, and dropped
   whole otherwise.

The internals beyond the 8x8 / 16x16 structure are an approximation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PATCH = 8
NEIGHBORHOOD = 16


@dataclass(frozen=True)
class PatchBaselineConfig:
    inlier_quantile: float = 0.9
    smoothing_majority: float = 0.5
    patch_majority: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.inlier_quantile < 1.0:
            raise ValueError("inlier_quantile must lie in (0, 1)")
        if not 0.0 < self.smoothing_majority <= 1.0:
            raise ValueError("smoothing_majority must lie in (0, 1]")
        if not 0.0 < self.patch_majority <= 1.0:
            raise ValueError("patch_majority must lie in (0, 1]")


def _box_sum(a: np.ndarray, y0, y1, x0, x1) -> np.ndarray:
    """Sum of ``a[y0:y1, x0:x1]`` for arrays of window bounds."""
    ii = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    ii[1:, 1:] = a.cumsum(0).cumsum(1)
    return ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0]


def _windows(n: int, starts: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    return np.clip(starts, 0, n), np.clip(starts + size, 0, n)


def inlier_threshold(residuals, q: float) -> float:
    return float(np.quantile(np.asarray(residuals, dtype=np.float64), q))


def patch_weights(residual_field: np.ndarray, cfg: PatchBaselineConfig = PatchBaselineConfig(),
                  threshold: float | None = None) -> np.ndarray:
    """Keep-mask (uint8, 1 = keep) for one residual region.

    ``threshold`` replaces the region's own quantile, so several regions can
    share one quantile taken over a whole batch or frame.
    """
    r = np.asarray(residual_field, dtype=np.float64)
    if r.ndim != 2:
        raise ValueError("residual field must be 2-D")
    h, w = r.shape
    if h % PATCH or w % PATCH or h == 0 or w == 0:
        raise ValueError(f"region {w}x{h} is not a multiple of {PATCH}")
    if threshold is None:
        threshold = inlier_threshold(r, cfg.inlier_quantile)
    stage1 = (r <= threshold).astype(np.float64)

    ys = np.arange(h)
    xs = np.arange(w)
    y0, y1 = _windows(h, ys - 1, 3)
    x0, x1 = _windows(w, xs - 1, 3)
    Y0, X0 = np.meshgrid(y0, x0, indexing="ij")
    Y1, X1 = np.meshgrid(y1, x1, indexing="ij")
    frac = _box_sum(stage1, Y0, Y1, X0, X1) / ((Y1 - Y0) * (X1 - X0))
    stage2 = (frac >= cfg.smoothing_majority).astype(np.float64)

    py = np.arange(h // PATCH) * PATCH
    px = np.arange(w // PATCH) * PATCH
    off = (NEIGHBORHOOD - PATCH) // 2
    y0, y1 = _windows(h, py - off, NEIGHBORHOOD)
    x0, x1 = _windows(w, px - off, NEIGHBORHOOD)
    Y0, X0 = np.meshgrid(y0, x0, indexing="ij")
    Y1, X1 = np.meshgrid(y1, x1, indexing="ij")
    frac = _box_sum(stage2, Y0, Y1, X0, X1) / ((Y1 - Y0) * (X1 - X0))
    keep = (frac >= cfg.patch_majority).astype(np.uint8)
    return np.kron(keep, np.ones((PATCH, PATCH), dtype=np.uint8))
