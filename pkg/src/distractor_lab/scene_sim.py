"""Synthetic multi-frame scenes with exact ground truth.

A static background is a Voronoi partition whose cells are filled with flat,
gradient or high-frequency checker textures, plus a few stationary "parked"
objects that are semantically things. Movers are solid rectangles or
ellipses following linear trajectories, repainted with a new color every
frame. All colors are quantized to multiples of 1/255 so that a scene
written to PNG and read back is bit-identical to the generated one.

Entity ids: Voronoi cells first, then parked objects, then movers. Static
pixels within ``boundary_erosion`` pixels of a higher id are marked
``UNASSIGNED``; mover pixels are never eroded.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import imgcore
from .rng import stream

UNASSIGNED = 65535
STUFF, THING = 1, 0
TEXTURES = ("flat", "gradient", "high-frequency")
_MAX_RETRIES = 8
_COLOR_TRIES = 64


@dataclass(frozen=True)
class SceneConfig:
    width: int = 128
    height: int = 128
    frame_count: int = 24
    static_entity_count: int = 40
    mover_count: int = 6
    mover_size_range: tuple[int, int] = (3, 40)
    texture_mix: tuple[float, float, float] = (0.4, 0.3, 0.3)
    semantic_noise_rate: float = 0.1
    boundary_erosion: int = 1
    seed: int = 0
    static_thing_fraction: float = 0.1
    checker_size: int = 1
    min_mover_contrast: float = 0.2
    mover_speed_range: tuple[float, float] = (0.05, 0.15)  # mover lengths per frame
    mover_color_jitter: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "mover_size_range", tuple(int(v) for v in self.mover_size_range))
        object.__setattr__(self, "texture_mix", tuple(float(v) for v in self.texture_mix))
        object.__setattr__(self, "mover_speed_range", tuple(float(v) for v in self.mover_speed_range))
        self.validate()

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("scene dimensions must be positive")
        if self.frame_count < 2:
            raise ValueError("frame_count must be >= 2")
        if self.static_entity_count < 2:
            raise ValueError("static_entity_count must be >= 2")
        if self.mover_count < 0:
            raise ValueError("mover_count must be >= 0")
        lo, hi = self.mover_size_range
        if lo < 1 or hi < lo:
            raise ValueError(f"bad mover_size_range {self.mover_size_range}")
        if len(self.texture_mix) != 3 or min(self.texture_mix) < 0:
            raise ValueError("texture_mix needs three nonnegative fractions")
        if abs(sum(self.texture_mix) - 1.0) > 1e-9:
            raise ValueError("texture_mix must sum to 1")
        if not 0.0 <= self.semantic_noise_rate <= 1.0:
            raise ValueError("semantic_noise_rate must lie in [0, 1]")
        if self.boundary_erosion < 0:
            raise ValueError("boundary_erosion must be >= 0")
        if not 0.0 <= self.static_thing_fraction < 1.0:
            raise ValueError("static_thing_fraction must lie in [0, 1)")
        slo, shi = self.mover_speed_range
        if slo < 0 or shi < slo:
            raise ValueError(f"bad mover_speed_range {self.mover_speed_range}")
        if not 0.01 <= self.mover_color_jitter <= 1.0:
            raise ValueError("mover_color_jitter must lie in [0.01, 1]")
        if self.checker_size < 1:
            raise ValueError("checker_size must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mover_size_range"] = list(self.mover_size_range)
        d["texture_mix"] = list(self.texture_mix)
        d["mover_speed_range"] = list(self.mover_speed_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scene config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class EntityRecord:
    id: int
    kind: str  # "stuff" | "static-thing" | "mover"
    texture: str | None = None

    @property
    def semantic(self) -> int:
        return STUFF if self.kind == "stuff" else THING


@dataclass(frozen=True)
class MoverTrack:
    entity: int
    shape: str  # "rect" | "ellipse"
    size: tuple[float, float]  # (w, h)
    start: tuple[float, float]  # center (x, y) at frame 0
    end: tuple[float, float]  # center at the last frame
    colors: tuple[tuple[float, float, float], ...]  # one per frame

    def center(self, frame: int, frame_count: int) -> tuple[float, float]:
        t = frame / (frame_count - 1)
        return (
            self.start[0] + t * (self.end[0] - self.start[0]),
            self.start[1] + t * (self.end[1] - self.start[1]),
        )


@dataclass(frozen=True)
class ParkedObject:
    entity: int
    shape: str
    size: tuple[float, float]
    center: tuple[float, float]


@dataclass
class Scene:
    config: SceneConfig
    frames: np.ndarray  # (F, H, W, 3) float64
    entity_maps: np.ndarray  # (F, H, W) int32, UNASSIGNED sentinel
    truth_background: np.ndarray  # (H, W, 3)
    mover_masks: np.ndarray  # (F, H, W) bool
    pseudo_semantics: np.ndarray  # (F, H, W) uint8, 1 = stuff
    registry: list[EntityRecord]
    tracks: list[MoverTrack] = field(default_factory=list)
    voronoi_seeds: list[tuple[float, float]] = field(default_factory=list)
    parked: list[ParkedObject] = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int]:
        return self.config.height, self.config.width

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    def entity_kind(self, entity: int) -> str:
        return self.registry[entity].kind

    def true_semantics(self) -> np.ndarray:
        """Noise-free stuff/thing labels, shape (F, H, W); eroded pixels keep their object's class."""
        lut = np.array([r.semantic for r in self.registry], dtype=np.uint8)
        return lut[raw_id_maps(self)]


def quantize(v):
    return np.round(np.asarray(v, dtype=np.float64) * 255.0) / 255.0


def rasterize(shape: str, center: tuple[float, float], size: tuple[float, float],
              height: int, width: int) -> np.ndarray:
    """Pixels whose centers fall inside the shape."""
    cx, cy = center
    w, h = size
    px = np.arange(width) + 0.5
    py = np.arange(height) + 0.5
    if shape == "rect":
        inx = (px >= cx - w / 2) & (px < cx + w / 2)
        iny = (py >= cy - h / 2) & (py < cy + h / 2)
        return iny[:, None] & inx[None, :]
    if shape == "ellipse":
        dx = (px[None, :] - cx) / (w / 2)
        dy = (py[:, None] - cy) / (h / 2)
        return dx * dx + dy * dy <= 1.0
    raise ValueError(f"unknown shape {shape!r}")


def _texture_counts(n: int, mix) -> list[int]:
    raw = np.asarray(mix) * n
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def _fill_cell(rng, texture: str, ys, xs, checker_size: int) -> np.ndarray:
    n = ys.size
    if texture == "flat":
        return np.broadcast_to(rng.uniform(0.1, 0.9, 3), (n, 3))
    if texture == "gradient":
        c0 = rng.uniform(0.1, 0.9, 3)
        c1 = rng.uniform(0.1, 0.9, 3)
        theta = rng.uniform(0.0, 2 * np.pi)
        proj = xs * np.cos(theta) + ys * np.sin(theta)
        span = proj.max() - proj.min()
        t = (proj - proj.min()) / span if span > 0 else np.zeros(n)
        return c0 + t[:, None] * (c1 - c0)
    if texture == "high-frequency":
        base = rng.uniform(0.3, 0.7, 3)
        amp = rng.uniform(0.15, 0.28)
        tint = rng.uniform(0.6, 1.0, 3)
        parity = ((xs // checker_size + ys // checker_size) % 2) * 2 - 1
        noise = rng.uniform(-0.05, 0.05, (n, 3))
        return np.clip(base + parity[:, None] * amp * tint + noise, 0.0, 1.0)
    raise ValueError(f"unknown texture {texture!r}")


def _erode(raw: np.ndarray, radius: int, first_mover: int) -> np.ndarray:
    """Mark static pixels next to a higher id as UNASSIGNED."""
    if radius == 0:
        return raw.copy()
    h, w = raw.shape
    padded = np.full((h + 2 * radius, w + 2 * radius), -1, dtype=np.int64)
    padded[radius:-radius, radius:-radius] = raw
    wmax = np.full(raw.shape, -1, dtype=np.int64)
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            np.maximum(wmax, padded[dy : dy + h, dx : dx + w], out=wmax)
    out = raw.copy()
    out[(wmax > raw) & (raw < first_mover)] = UNASSIGNED
    return out


def _voronoi(seeds: np.ndarray, height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    px = xx.ravel() + 0.5
    py = yy.ravel() + 0.5
    d = (px[:, None] - seeds[None, :, 0]) ** 2 + (py[:, None] - seeds[None, :, 1]) ** 2
    return np.argmin(d, axis=1).reshape(height, width).astype(np.int32)


def _static_layer(cfg: SceneConfig, rng):
    """Voronoi cells plus parked objects; returns (ids, background, registry, seeds, parked)."""
    h, w = cfg.height, cfg.width
    n_parked = int(round(cfg.static_thing_fraction * cfg.static_entity_count))
    n_cells = cfg.static_entity_count - n_parked
    if n_cells < 1:
        raise ValueError("static_thing_fraction leaves no background cells")
    for _ in range(_MAX_RETRIES):
        seeds = rng.uniform(0.0, 1.0, (n_cells, 2)) * (w, h)
        ids = _voronoi(seeds, h, w)
        counts = _texture_counts(n_cells, cfg.texture_mix)
        textures = [t for t, c in zip(TEXTURES, counts) for _ in range(c)]
        textures = [textures[i] for i in rng.permutation(n_cells)]
        registry = [EntityRecord(i, "stuff", textures[i]) for i in range(n_cells)]
        parked = []
        bg = np.zeros((h, w, 3))
        for i in range(n_cells):
            ys, xs = np.nonzero(ids == i)
            if ys.size:
                bg[ys, xs] = _fill_cell(rng, textures[i], ys, xs, cfg.checker_size)
        lo = max(2, min(cfg.mover_size_range[0], 6))
        hi = max(lo, min(16, w, h))
        for j in range(n_parked):
            e = n_cells + j
            size = (float(rng.integers(lo, hi + 1)), float(rng.integers(lo, hi + 1)))
            center = (rng.uniform(size[0] / 2, w - size[0] / 2),
                      rng.uniform(size[1] / 2, h - size[1] / 2))
            shape = "rect" if rng.random() < 0.5 else "ellipse"
            m = rasterize(shape, center, size, h, w)
            ids[m] = e
            bg[m] = rng.uniform(0.1, 0.9, 3)
            registry.append(EntityRecord(e, "static-thing", "flat"))
            parked.append(ParkedObject(e, shape, size, center))
        eroded = _erode(ids, cfg.boundary_erosion, first_mover=cfg.static_entity_count)
        present = np.bincount(eroded[eroded != UNASSIGNED], minlength=cfg.static_entity_count)
        if np.all(present[: cfg.static_entity_count] > 0):
            return ids, quantize(bg), registry, [tuple(s) for s in seeds.tolist()], parked
    raise RuntimeError(
        f"could not place {cfg.static_entity_count} static entities with nonzero area "
        f"after erosion in {_MAX_RETRIES} attempts"
    )


def _mover_color(rng, bg_pixels: np.ndarray, min_contrast: float) -> np.ndarray:
    best, best_score = None, -1.0
    for _ in range(_COLOR_TRIES):
        c = quantize(rng.uniform(0.0, 1.0, 3))
        score = float(((bg_pixels - c) ** 2).sum(axis=1).mean()) if bg_pixels.size else np.inf
        if score >= min_contrast:
            return c
        if score > best_score:
            best, best_score = c, score
    return best


def _jittered(rng, base: np.ndarray, jitter: float, previous) -> tuple:
    """Base color moved by a uniform per-channel jitter, differing from the previous frame's."""
    c = base
    for _ in range(_COLOR_TRIES):
        c = quantize(np.clip(base + rng.uniform(-jitter, jitter, 3), 0.0, 1.0))
        if previous is None or tuple(c.tolist()) != previous:
            break
    return tuple(c.tolist())


def _tracks(cfg: SceneConfig, rng, bg: np.ndarray) -> list[MoverTrack]:
    h, w = cfg.height, cfg.width
    lo, hi = cfg.mover_size_range
    if cfg.mover_count and hi > min(w, h):
        raise ValueError(f"mover size {hi} exceeds image dimensions {w}x{h}")
    tracks = []
    for j in range(cfg.mover_count):
        # the first mover takes the smallest size so small movers are always exercised;
        # the rest are log-uniform, keeping mover area near a tenth of the frame
        size = lo if j == 0 else int(round(np.exp(rng.uniform(np.log(lo), np.log(hi)))))
        aspect = rng.uniform(0.5, 1.0)
        other = max(1, int(round(size * aspect))) if size > lo else size
        dims = (float(size), float(other)) if rng.random() < 0.5 else (float(other), float(size))
        shape = "rect" if rng.random() < 0.5 else "ellipse"
        lo_c = (dims[0] / 2, dims[1] / 2)
        hi_c = (w - dims[0] / 2, h - dims[1] / 2)
        start = (rng.uniform(lo_c[0], hi_c[0]), rng.uniform(lo_c[1], hi_c[1]))
        travel = rng.uniform(*cfg.mover_speed_range) * max(dims) * (cfg.frame_count - 1)
        angle = rng.uniform(0.0, 2 * np.pi)
        # paths that would leave the frame stop at its edge
        end = (float(np.clip(start[0] + travel * np.cos(angle), lo_c[0], hi_c[0])),
               float(np.clip(start[1] + travel * np.sin(angle), lo_c[1], hi_c[1])))
        track = MoverTrack(cfg.static_entity_count + j, shape, dims, start, end, ())
        path = np.zeros((h, w), dtype=bool)
        for f in range(cfg.frame_count):
            path |= rasterize(shape, track.center(f, cfg.frame_count), dims, h, w)
        base = _mover_color(rng, bg[path], cfg.min_mover_contrast)
        colors = [_jittered(rng, base, cfg.mover_color_jitter, None)]
        for f in range(1, cfg.frame_count):
            colors.append(_jittered(rng, base, cfg.mover_color_jitter, colors[-1]))
        tracks.append(MoverTrack(track.entity, shape, dims, start, end, tuple(colors)))
    return tracks


def _compose(cfg, static_ids, bg, tracks, registry, rng, seeds, parked) -> Scene:
    h, w, nf = cfg.height, cfg.width, cfg.frame_count
    frames = np.repeat(bg[None], nf, axis=0)
    emaps = np.empty((nf, h, w), dtype=np.int32)
    movers = np.zeros((nf, h, w), dtype=bool)
    sem = np.empty((nf, h, w), dtype=np.uint8)
    lut = np.array([r.semantic for r in registry], dtype=np.uint8)
    for f in range(nf):
        raw = static_ids.copy()
        for t in tracks:
            m = rasterize(t.shape, t.center(f, nf), t.size, h, w)
            raw[m] = t.entity
            frames[f][m] = t.colors[f]
        movers[f] = raw >= cfg.static_entity_count
        emaps[f] = _erode(raw, cfg.boundary_erosion, cfg.static_entity_count)
        labels = lut[raw]
        flip = rng.random((h, w)) < cfg.semantic_noise_rate
        sem[f] = np.where(flip, 1 - labels, labels)
    return Scene(cfg, frames, emaps, bg, movers, sem, registry, tracks, seeds, parked)


def generate_scene(cfg: SceneConfig) -> Scene:
    rng = stream(cfg.seed, "scene")
    static_ids, bg, registry, seeds, parked = _static_layer(cfg, rng)
    tracks = _tracks(cfg, rng, bg)
    registry = registry + [EntityRecord(t.entity, "mover") for t in tracks]
    return _compose(cfg, static_ids, bg, tracks, registry, rng, seeds, parked)


def static_id_map(scene: Scene) -> np.ndarray:
    """Un-eroded static ids (Voronoi cells with parked objects on top)."""
    cfg = scene.config
    ids = _voronoi(np.asarray(scene.voronoi_seeds), cfg.height, cfg.width)
    for p in scene.parked:
        ids[rasterize(p.shape, p.center, p.size, cfg.height, cfg.width)] = p.entity
    return ids


def raw_id_maps(scene: Scene) -> np.ndarray:
    """Per-frame ids before erosion, i.e. the object each pixel actually shows."""
    cfg = scene.config
    out = np.repeat(static_id_map(scene)[None], scene.frame_count, axis=0)
    for t in scene.tracks:
        for f in range(scene.frame_count):
            m = rasterize(t.shape, t.center(f, scene.frame_count), t.size, cfg.height, cfg.width)
            out[f][m] = t.entity
    return out


def texture_mask(scene: Scene, texture: str) -> np.ndarray:
    """Pixels of the static background belonging to cells with ``texture``."""
    ids = static_id_map(scene)
    wanted = [r.id for r in scene.registry if r.kind == "stuff" and r.texture == texture]
    return np.isin(ids, wanted)


# -- persistence -------------------------------------------------------------

def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_scene(scene: Scene, out: str | Path) -> Path:
    out = Path(out)
    for sub in ("frames", "entities", "movers", "semantics"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    meta = {
        "config": scene.config.to_dict(),
        "registry": [asdict(r) for r in scene.registry],
        "trajectories": [
            {**asdict(t), "size": list(t.size), "start": list(t.start), "end": list(t.end),
             "colors": [list(c) for c in t.colors]}
            for t in scene.tracks
        ],
        "voronoi_seeds": [list(s) for s in scene.voronoi_seeds],
        "parked": [
            {**asdict(p), "size": list(p.size), "center": list(p.center)} for p in scene.parked
        ],
        "unassigned": UNASSIGNED,
    }
    _dump_json(out / "scene.json", meta)
    imgcore.save_image(out / "background.png", scene.truth_background)
    for f in range(scene.frame_count):
        imgcore.save_image(out / "frames" / f"{f:03d}.png", scene.frames[f])
        imgcore.save_u16(out / "entities" / f"{f:03d}.png", scene.entity_maps[f])
        imgcore.save_mask(out / "movers" / f"{f:03d}.png", scene.mover_masks[f])
        imgcore.save_mask(out / "semantics" / f"{f:03d}.png", scene.pseudo_semantics[f])
    return out


def load_scene(path: str | Path) -> Scene:
    path = Path(path)
    meta = json.loads((path / "scene.json").read_text())
    cfg = SceneConfig.from_dict(meta["config"])
    registry = [EntityRecord(**r) for r in meta["registry"]]
    tracks = [
        MoverTrack(t["entity"], t["shape"], tuple(t["size"]), tuple(t["start"]), tuple(t["end"]),
                   tuple(tuple(c) for c in t["colors"]))
        for t in meta["trajectories"]
    ]
    nf = cfg.frame_count
    frames = np.stack([imgcore.load_image(path / "frames" / f"{f:03d}.png") for f in range(nf)])
    emaps = np.stack([imgcore.load_u16(path / "entities" / f"{f:03d}.png") for f in range(nf)])
    movers = np.stack([imgcore.load_mask(path / "movers" / f"{f:03d}.png") for f in range(nf)])
    sem = np.stack([imgcore.load_mask(path / "semantics" / f"{f:03d}.png") for f in range(nf)])
    bg = imgcore.load_image(path / "background.png")
    seeds = [tuple(s) for s in meta["voronoi_seeds"]]
    parked = [ParkedObject(p["entity"], p["shape"], tuple(p["size"]), tuple(p["center"]))
              for p in meta["parked"]]
    return Scene(cfg, frames, emaps.astype(np.int32), bg, movers, sem.astype(np.uint8),
                 registry, tracks, seeds, parked)
