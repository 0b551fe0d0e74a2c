"""Image containers, mask morphology and quality metrics.

Images are ``float64`` arrays of shape ``(H, W, 3)`` with channels in [0, 1];
masks are ``bool`` arrays of shape ``(H, W)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

MSE_FLOOR = 1e-10
PSNR_CEILING = 10.0 * math.log10(1.0 / MSE_FLOOR)


def as_image(data) -> np.ndarray:
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("image channels must lie in [0, 1]")
    return img


def as_mask(data) -> np.ndarray:
    m = np.asarray(data)
    if m.ndim != 2:
        raise ValueError(f"expected an (H, W) mask, got shape {m.shape}")
    return m.astype(bool)


@dataclass(frozen=True)
class MetricsRecord:
    psnr_overall: float
    psnr_foreground: float
    psnr_background: float
    iou_d0: float
    iou_d1: float
    included_pixel_fraction: float

    def to_dict(self) -> dict:
        return asdict(self)


def psnr(pred: np.ndarray, truth: np.ndarray, region: np.ndarray | None = None) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0.

    The mean squared error is taken over every channel of the selected
    pixels and clamped at ``MSE_FLOOR``, so identical inputs give 100 dB.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    diff = (pred - truth) ** 2
    if region is not None:
        region = as_mask(region)
        if region.shape != pred.shape[:2]:
            raise ValueError("region does not match image dimensions")
        if not region.any():
            raise ValueError("region selects no pixels")
        diff = diff[region]
    mse = max(float(diff.mean()), MSE_FLOOR)
    return 10.0 * math.log10(1.0 / mse)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    a = as_mask(a)
    b = as_mask(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def dilate3x3(m: np.ndarray) -> np.ndarray:
    """Binary dilation with a 3x3 square, clipped at the borders.

    Same result as convolving with a positive 3x3 kernel and setting every
    positive response to 1.
    """
    m = as_mask(m)
    h, w = m.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = m
    out = np.zeros_like(m)
    for dy in range(3):
        for dx in range(3):
            out |= padded[dy : dy + h, dx : dx + w]
    return out


# -- PNG serialization ------------------------------------------------------

def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path: str | Path, img: np.ndarray) -> None:
    PILImage.fromarray(to_uint8(img)).save(path, format="PNG")


def load_image(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_mask(path: str | Path, m: np.ndarray) -> None:
    data = np.where(as_mask(m), 255, 0).astype(np.uint8)
    PILImage.fromarray(data).save(path, format="PNG")


def load_mask(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def save_u16(path: str | Path, ids: np.ndarray) -> None:
    data = np.ascontiguousarray(ids, dtype=np.uint16)
    PILImage.fromarray(data).save(path, format="PNG")


def load_u16(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im, dtype=np.int64).astype(np.int32)
