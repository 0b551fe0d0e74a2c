"""Stationary (stuff) vs thing classification of entities.

Each entity in a frame is summarized by twelve handcrafted statistics and
scored by a small MLP (12 -> 32 -> 32 -> 32 -> 1, ReLU hidden, logistic
output). The network is pretrained on per-entity majority votes of noisy
pixel semantics and later nudged towards "stuff" for entities the residual
ranks keep including.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .scene_sim import UNASSIGNED

FEATURE_NAMES = (
    "mean_r", "mean_g", "mean_b",
    "std_r", "std_g", "std_b",
    "centroid_x", "centroid_y",
    "log_area",
    "gradient_energy",
    "bbox_aspect", "bbox_fill",
)
FEATURE_DIM = len(FEATURE_NAMES)
LAYERS = (FEATURE_DIM, 32, 32, 32, 1)
_LUMA = np.array([0.299, 0.587, 0.114])


def _log_area(area, total: int):
    if total <= 1:
        return np.zeros_like(np.asarray(area, dtype=np.float64))
    return np.log(area) / np.log(total) - 1.0


def _gradient_magnitude(lum: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Forward-difference luminance gradient, zero across entity borders."""
    gx = np.zeros_like(lum)
    gy = np.zeros_like(lum)
    same_x = ids[:, 1:] == ids[:, :-1]
    same_y = ids[1:, :] == ids[:-1, :]
    gx[:, :-1] = np.where(same_x, lum[:, 1:] - lum[:, :-1], 0.0)
    gy[:-1, :] = np.where(same_y, lum[1:, :] - lum[:-1, :], 0.0)
    return np.sqrt(gx * gx + gy * gy)


def extract_features(frame: np.ndarray, emap: np.ndarray, entity: int) -> np.ndarray:
    """Twelve statistics over the pixels of one entity (see ``FEATURE_NAMES``)."""
    mask = emap == entity
    if entity == UNASSIGNED or not mask.any():
        raise ValueError(f"entity {entity} does not occur in the map")
    h, w = emap.shape
    ys, xs = np.nonzero(mask)
    # shifting by one member pixel makes a constant region's deviation exactly zero
    px = frame[mask] - frame[ys[0], xs[0]]
    area = ys.size
    shift = px.mean(axis=0)
    mean = frame[ys[0], xs[0]] + shift
    std = np.sqrt(((px - shift) ** 2).mean(axis=0))
    cx = (xs.mean() + 0.5) / w
    cy = (ys.mean() + 0.5) / h
    grad = _gradient_magnitude(frame @ _LUMA, np.where(mask, 1, 0))[mask].mean()
    bw = xs.max() - xs.min() + 1
    bh = ys.max() - ys.min() + 1
    return np.concatenate([
        mean, std, [cx, cy, float(_log_area(area, h * w)), grad, bw / (bw + bh), area / (bw * bh)]
    ])


def frame_features(frame: np.ndarray, emap: np.ndarray) -> dict[int, np.ndarray]:
    """``extract_features`` for every entity of a frame at once."""
    h, w = emap.shape
    ids = emap.ravel()
    valid = ids != UNASSIGNED
    ents, first, inv = np.unique(ids[valid], return_index=True, return_inverse=True)
    inv = inv.ravel()
    n = len(ents)
    if n == 0:
        return {}
    px = frame.reshape(-1, 3)[valid]
    px = px - px[first][inv]  # same shift as extract_features
    yy, xx = np.divmod(np.flatnonzero(valid), w)
    area = np.bincount(inv, minlength=n).astype(np.float64)
    shift = np.stack([np.bincount(inv, px[:, c], n) for c in range(3)], axis=1) / area[:, None]
    dev = (px - shift[inv]) ** 2
    mean = frame.reshape(-1, 3)[valid][first] + shift
    std = np.sqrt(np.stack([np.bincount(inv, dev[:, c], n) for c in range(3)], axis=1) / area[:, None])
    cx = (np.bincount(inv, xx, n) / area + 0.5) / w
    cy = (np.bincount(inv, yy, n) / area + 0.5) / h
    gmag = _gradient_magnitude(frame @ _LUMA, emap).ravel()[valid]
    grad = np.bincount(inv, gmag, n) / area
    x0 = np.full(n, w); x1 = np.full(n, -1)
    y0 = np.full(n, h); y1 = np.full(n, -1)
    np.minimum.at(x0, inv, xx); np.maximum.at(x1, inv, xx)
    np.minimum.at(y0, inv, yy); np.maximum.at(y1, inv, yy)
    bw = (x1 - x0 + 1).astype(np.float64)
    bh = (y1 - y0 + 1).astype(np.float64)
    feats = np.column_stack([mean, std, cx, cy, _log_area(area, h * w), grad, bw / (bw + bh), area / (bw * bh)])
    return {int(e): feats[i] for i, e in enumerate(ents)}


@dataclass(frozen=True)
class PseudoLabel:
    label: int  # 1 = stuff
    fraction: float  # share of stuff votes


def bootstrap_labels(pseudo_semantics: np.ndarray, emap: np.ndarray) -> dict[int, PseudoLabel]:
    """Majority vote of pixel stuff/thing labels per entity; exact ties go to thing."""
    if pseudo_semantics.shape != emap.shape:
        raise ValueError("semantics and entity map dimensions differ")
    ids = emap.ravel()
    valid = ids != UNASSIGNED
    ents, inv = np.unique(ids[valid], return_inverse=True)
    inv = inv.ravel()
    votes = np.bincount(inv, pseudo_semantics.ravel()[valid].astype(np.float64), len(ents))
    counts = np.bincount(inv, minlength=len(ents))
    out = {}
    for e, v, c in zip(ents, votes, counts):
        frac = v / c
        out[int(e)] = PseudoLabel(int(frac > 0.5), float(frac))
    return out


# -- classifier ------------------------------------------------------------

@dataclass
class ClassifierParams:
    weights: list[np.ndarray]  # (fan_in, fan_out) per layer
    biases: list[np.ndarray]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    @classmethod
    def from_flat(cls, v: np.ndarray) -> "ClassifierParams":
        ws, bs, i = [], [], 0
        for fin, fout in zip(LAYERS[:-1], LAYERS[1:]):
            ws.append(v[i : i + fin * fout].reshape(fin, fout)); i += fin * fout
            bs.append(v[i : i + fout].copy()); i += fout
        return cls(ws, bs)

    @classmethod
    def zeros(cls) -> "ClassifierParams":
        return cls([np.zeros((a, b)) for a, b in zip(LAYERS[:-1], LAYERS[1:])],
                   [np.zeros(b) for b in LAYERS[1:]])


def init_classifier(rng: np.random.Generator) -> ClassifierParams:
    ws = [rng.normal(0.0, np.sqrt(2.0 / a), (a, b)) for a, b in zip(LAYERS[:-1], LAYERS[1:])]
    return ClassifierParams(ws, [np.zeros(b) for b in LAYERS[1:]])


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def _forward(params: ClassifierParams, x: np.ndarray):
    acts = [x]
    h = x
    for w, b in zip(params.weights[:-1], params.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    logit = (h @ params.weights[-1] + params.biases[-1])[:, 0]
    return logit, acts


def classifier_forward(params: ClassifierParams, features) -> np.ndarray:
    """Probability of stuff for one feature vector or a stack of them."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    logit, _ = _forward(params, np.atleast_2d(x))
    p = sigmoid(logit)
    return p[0] if single else p


def stuff_flag(prob) -> np.ndarray:
    return (np.asarray(prob) >= 0.5).astype(np.uint8)


def bce_loss(params: ClassifierParams, x: np.ndarray, y: np.ndarray) -> float:
    logit, _ = _forward(params, x)
    # softplus(z) - y z, written stably
    return float(np.mean(np.maximum(logit, 0) + np.log1p(np.exp(-np.abs(logit))) - y * logit))


def bce_grad(params: ClassifierParams, x: np.ndarray, y: np.ndarray) -> ClassifierParams:
    logit, acts = _forward(params, x)
    delta = ((sigmoid(logit) - y) / len(y))[:, None]
    gw, gb = [], []
    for layer in range(len(params.weights) - 1, -1, -1):
        gw.append(acts[layer].T @ delta)
        gb.append(delta.sum(axis=0))
        if layer:
            delta = (delta @ params.weights[layer].T) * (acts[layer] > 0)
    return ClassifierParams(gw[::-1], gb[::-1])


def classifier_train_step(params: ClassifierParams, features, labels, lr: float) -> ClassifierParams:
    """One gradient-descent step on mean binary cross-entropy."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).ravel()
    if len(y) == 0 or x.shape[0] != len(y):
        raise ValueError("classifier batch must be nonempty with one label per feature")
    g = bce_grad(params, x, y)
    return ClassifierParams(
        [w - lr * dw for w, dw in zip(params.weights, g.weights)],
        [b - lr * db for b, db in zip(params.biases, g.biases)],
    )


def pretrain(params: ClassifierParams, features, labels, lr: float = 1e-2,
             max_steps: int = 5000, target_accuracy: float = 0.98) -> tuple[ClassifierParams, int, float]:
    """Full-batch descent until training accuracy reaches the target or the step budget runs out."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    acc = 0.0
    for step in range(max_steps + 1):
        acc = float(np.mean(stuff_flag(classifier_forward(params, x)) == y))
        if acc >= target_accuracy or step == max_steps:
            return params, step, acc
        params = classifier_train_step(params, x, y, lr)
    return params, max_steps, acc


def cooperative_finetune(params: ClassifierParams, window, lr: float = 1e-3) -> ClassifierParams:
    """One step pushing every entity in ``window`` (kept by the ranks) towards stuff."""
    if len(window) == 0:
        return params
    x = np.asarray(window, dtype=np.float64)
    return classifier_train_step(params, x, np.ones(len(x)), lr)


def to_f32(params: ClassifierParams) -> ClassifierParams:
    return ClassifierParams([checkpoint.to_f32(w) for w in params.weights],
                            [checkpoint.to_f32(b) for b in params.biases])


def save_classifier(params: ClassifierParams, path) -> None:
    arrays = [a for pair in zip(params.weights, params.biases) for a in pair]
    checkpoint.write(path, {"kind": "mlp", "layers": list(LAYERS)}, arrays)


def load_classifier(path) -> ClassifierParams:
    header, arrays = checkpoint.read(path)
    if header.get("kind") != "mlp" or tuple(header["layers"]) != LAYERS:
        raise ValueError(f"{path} is not a stationary-classifier checkpoint")
    return ClassifierParams(arrays[0::2], arrays[1::2])
