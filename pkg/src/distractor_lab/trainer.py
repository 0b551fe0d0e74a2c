"""Masked reconstruction training, end-of-run evaluation and sweeps.

One iteration samples ``batch_pixels / k**2`` patches, measures residuals of
the current model, turns them into per-pixel keep weights ``D`` with the
configured method and takes one gradient step on the kept pixels:

* ``mse``          keep everything;
* ``robust-patch`` 8x8 patch statistics (``baseline_patch``);
* ``earr``         entity rank averages, every entity treated as a thing;
* ``entity``       entity rank averages with stuff entities forced in by the
                   stationary classifier, which is fine-tuned periodically.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import checkpoint, earr, field_models, imgcore, stationary
from .baseline_patch import PatchBaselineConfig, inlier_threshold, patch_weights
from .imgcore import MetricsRecord
from .rng import stream
from .scene_sim import Scene

METHODS = ("mse", "robust-patch", "earr", "entity")
DEFAULT_LR = {"fourier": 0.05, "grid": 1024.0}
EVAL_RANKING = "per-frame"
POOLED = True


@dataclass(frozen=True)
class TrainConfig:
    method: str = "entity"
    iterations: int = 3000
    learning_rate: float | None = None  # None picks the model default
    batch_pixels: int = 4096
    patch_size: int = 32
    threshold: float = 0.8
    finetune_interval: int = 100
    dilation_enabled: bool = True
    seed: int = 0
    model: str = "fourier"
    fourier_order: int = 32
    spectral_scale: float = 8.0
    pretrain_lr: float = 1e-2
    pretrain_steps: int = 5000
    pretrain_target: float = 0.98
    finetune_lr: float = 1e-3
    probe_pixels: int = 1024
    probe_interval: int = 100

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.model not in DEFAULT_LR:
            raise ValueError(f"unknown model {self.model!r}")
        earr.patches_per_batch(self.batch_pixels, self.patch_size)
        earr.EarrConfig(self.patch_size, self.threshold, self.dilation_enabled)
        if self.finetune_interval < 1:
            raise ValueError("finetune_interval must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.method == "robust-patch" and self.patch_size % 8:
            raise ValueError("robust-patch needs a patch size divisible by 8")

    @property
    def lr(self) -> float:
        return DEFAULT_LR[self.model] if self.learning_rate is None else self.learning_rate

    @property
    def earr_config(self) -> earr.EarrConfig:
        return earr.EarrConfig(self.patch_size, self.threshold, self.dilation_enabled)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainLog:
    iteration: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    included_fraction: list[float] = field(default_factory=list)
    included_static_fraction: list[float] = field(default_factory=list)
    probe_psnr: list[float] = field(default_factory=list)  # NaN between probes

    def append(self, it, loss, inc, inc_static, probe=math.nan):
        self.iteration.append(it)
        self.loss.append(loss)
        self.included_fraction.append(inc)
        self.included_static_fraction.append(inc_static)
        self.probe_psnr.append(probe)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "loss", "included_fraction", "included_static_fraction", "probe_psnr"])
            for row in zip(self.iteration, self.loss, self.included_fraction,
                           self.included_static_fraction, self.probe_psnr):
                w.writerow([row[0]] + ["" if math.isnan(v) else repr(v) for v in row[1:]])


@dataclass
class RunResult:
    model: object
    log: TrainLog
    d_maps: np.ndarray  # (F, H, W) uint8, 1 = keep
    metrics: MetricsRecord
    config: TrainConfig
    baseline: PatchBaselineConfig
    classifier: stationary.ClassifierParams | None = None


# -- per-iteration weighting -------------------------------------------------

class _EntityFlags:
    """Cached stuff flags per (frame, entity), refreshed after each fine-tune."""

    def __init__(self, scene: Scene, params: stationary.ClassifierParams):
        self.features = [stationary.frame_features(scene.frames[f], scene.entity_maps[f])
                         for f in range(scene.frame_count)]
        self.keys = [(f, e) for f in range(scene.frame_count) for e in sorted(self.features[f])]
        self.matrix = np.stack([self.features[f][e] for f, e in self.keys])
        self.refresh(params)

    def refresh(self, params) -> None:
        self.params = params
        flags = stationary.stuff_flag(stationary.classifier_forward(params, self.matrix))
        self.flags = dict(zip(self.keys, flags.tolist()))

    def for_clusters(self, stats, patch_frames) -> dict:
        return {(c.patch, c.entity): self.flags[(int(patch_frames[c.patch]), c.entity)] for c in stats}


def pretrain_classifier(scene: Scene, cfg: TrainConfig):
    feats, labels = [], []
    for f in range(scene.frame_count):
        ff = stationary.frame_features(scene.frames[f], scene.entity_maps[f])
        votes = stationary.bootstrap_labels(scene.pseudo_semantics[f], scene.entity_maps[f])
        for e in sorted(ff):
            feats.append(ff[e])
            labels.append(votes[e].label)
    # a static entity repeats with identical features in every frame it is not
    # occluded in; keeping one copy stops those repeats from swamping the movers
    rows = np.column_stack([np.array(feats), np.array(labels, dtype=np.float64)])
    _, first = np.unique(rows, axis=0, return_index=True)
    rows = rows[np.sort(first)]
    params = stationary.init_classifier(stream(cfg.seed, "classifier"))
    return stationary.pretrain(params, rows[:, :-1], rows[:, -1], cfg.pretrain_lr,
                               cfg.pretrain_steps, cfg.pretrain_target)


def _rank_weights(res_pk, ids_pk, flags, cfg: TrainConfig):
    ranks = earr.rank_normalize(res_pk.ravel()).reshape(res_pk.shape)
    stats = earr.cluster_patches(ranks, ids_pk)
    d = earr.label_distractors(stats, flags(stats), cfg.earr_config, res_pk.shape)
    return d, stats


def _patch_weights(res_pk, baseline: PatchBaselineConfig, pooled: bool):
    thr = inlier_threshold(res_pk, baseline.inlier_quantile) if pooled else None
    return np.concatenate([patch_weights(r, baseline, thr).ravel() for r in res_pk])


# -- training -----------------------------------------------------------------

def train_run(scene: Scene, cfg: TrainConfig,
              baseline: PatchBaselineConfig = PatchBaselineConfig()) -> RunResult:
    h, w = scene.shape
    k = cfg.patch_size
    n_patches = earr.patches_per_batch(cfg.batch_pixels, k)
    sampler = stream(cfg.seed, "sampling")
    model = field_models.make_model(cfg.model, w, h, cfg.fourier_order, cfg.spectral_scale)
    probe_rng = stream(cfg.seed, "init")
    probe = np.stack([probe_rng.integers(0, w, cfg.probe_pixels),
                      probe_rng.integers(0, h, cfg.probe_pixels)], axis=1)
    probe_truth = scene.truth_background[probe[:, 1], probe[:, 0]]

    classifier = flags = None
    # (frame, entity) -> clusters kept minus clusters excluded by rank since the last fine-tune
    window: dict[tuple[int, int], int] = {}
    if cfg.method == "entity":
        classifier, _, _ = pretrain_classifier(scene, cfg)
        flags = _EntityFlags(scene, classifier)

    log = TrainLog()
    for it in range(cfg.iterations):
        batch = earr.sample_patches(sampler, w, h, scene.frame_count, k, n_patches)
        targets = batch.gather(scene.frames)
        raw = model.raw_patches(batch.origins, k)
        res = ((np.clip(raw, 0.0, 1.0) - targets) ** 2).sum(axis=3)

        if cfg.method == "mse":
            d = np.ones(res.size, dtype=np.uint8)
        elif cfg.method == "robust-patch":
            d = _patch_weights(res, baseline, POOLED)
        else:
            ids = batch.gather(scene.entity_maps)
            if cfg.method == "earr":
                d, stats = _rank_weights(res, ids, earr.all_thing, cfg)
            else:
                patch_flags = lambda st: flags.for_clusters(st, batch.frames)  # noqa: E731
                d, stats = _rank_weights(res, ids, patch_flags, cfg)
                # votes come from the ranks alone, so the stuff override cannot
                # feed back into its own training data
                for c in stats:
                    key = (int(batch.frames[c.patch]), c.entity)
                    window[key] = window.get(key, 0) + (1 if c.mean_rank <= cfg.threshold else -1)

        model, loss, _ = field_models.masked_patch_step(model, batch.origins, k, targets, d, cfg.lr, raw)
        if not math.isfinite(loss) or not np.all(np.isfinite(model.params)):
            raise FloatingPointError(
                f"loss diverged at iteration {it} (loss={loss}); lower learning_rate (now {cfg.lr})"
            )
        static = ~batch.gather(scene.mover_masks).ravel()
        inc_static = float(d[static].mean()) if static.any() else 1.0
        probe_psnr = math.nan
        if (it + 1) % cfg.probe_interval == 0:
            probe_psnr = imgcore.psnr(field_models.model_forward(model, probe), probe_truth)
        log.append(it + 1, loss, float(d.mean()), inc_static, probe_psnr)

        if cfg.method == "entity" and (it + 1) % cfg.finetune_interval == 0:
            feats = [flags.features[f][e] for (f, e), v in sorted(window.items()) if v > 0]
            flags.refresh(stationary.cooperative_finetune(flags.params, feats, cfg.finetune_lr))
            window.clear()

    # evaluate exactly what a checkpoint stores
    model.params = checkpoint.to_f32(model.params)
    if flags is not None:
        classifier = stationary.to_f32(flags.params)
    d_maps = eval_full_frame_D(model, scene, cfg, classifier, baseline)
    metrics = evaluate_metrics(model, scene, d_maps)
    return RunResult(model, log, d_maps, metrics, cfg, baseline, classifier)


# -- evaluation -----------------------------------------------------------------

def tile_origins(size: int, k: int) -> list[int]:
    """Non-overlapping tiles; a last partial tile is shifted inward to end at the border."""
    starts = list(range(0, size - k + 1, k))
    if starts[-1] + k < size:
        starts.append(size - k)
    return starts


def eval_full_frame_D(model, scene: Scene, cfg: TrainConfig,
                      classifier: stationary.ClassifierParams | None = None,
                      baseline: PatchBaselineConfig = PatchBaselineConfig()) -> np.ndarray:
    """Full-frame keep maps from the frozen model, ranking each frame on its own."""
    h, w = scene.shape
    k = cfg.patch_size
    nf = scene.frame_count
    out = np.ones((nf, h, w), dtype=np.uint8)
    if cfg.method == "mse":
        return out
    if cfg.method == "entity" and classifier is None:
        raise ValueError("entity evaluation needs classifier parameters")
    render = field_models.render_full(model)
    ys, xs = tile_origins(h, k), tile_origins(w, k)
    tiles = [(y, x) for y in ys for x in xs]
    for f in range(nf):
        res = ((render - scene.frames[f]) ** 2).sum(axis=2)
        if cfg.method == "robust-patch":
            thr = inlier_threshold(res, baseline.inlier_quantile) if POOLED else None
            d_tiles = [patch_weights(res[y : y + k, x : x + k], baseline, thr) for y, x in tiles]
        else:
            ranks = earr.rank_normalize(res.ravel()).reshape(h, w)
            r_pk = np.stack([ranks[y : y + k, x : x + k] for y, x in tiles])
            ids_pk = np.stack([scene.entity_maps[f, y : y + k, x : x + k] for y, x in tiles])
            stats = earr.cluster_patches(r_pk, ids_pk)
            if cfg.method == "entity":
                feats = stationary.frame_features(scene.frames[f], scene.entity_maps[f])
                ents = sorted(feats)
                probs = stationary.classifier_forward(classifier, np.stack([feats[e] for e in ents]))
                by_entity = dict(zip(ents, stationary.stuff_flag(probs).tolist()))
                flag_map = {(c.patch, c.entity): by_entity[c.entity] for c in stats}
            else:
                flag_map = earr.all_thing(stats)
            d_tiles = earr.label_distractors(stats, flag_map, cfg.earr_config, r_pk.shape).reshape(r_pk.shape)
        for (y, x), dt in zip(tiles, d_tiles):
            out[f, y : y + k, x : x + k] &= dt
    return out


def evaluate_metrics(model, scene: Scene, d_maps: np.ndarray) -> MetricsRecord:
    """PSNR of the rendered background behind movers and elsewhere, and keep-mask IoU.

    Foreground PSNR averages per-frame PSNR over each frame's mover pixels;
    without any mover it falls back to the overall PSNR.
    """
    render = field_models.render_full(model)
    bg = scene.truth_background
    overall = imgcore.psnr(render, bg)
    fg, back, iou0, iou1 = [], [], [], []
    for f in range(scene.frame_count):
        m = scene.mover_masks[f]
        if m.any():
            fg.append(imgcore.psnr(render, bg, m))
        if not m.all():
            back.append(imgcore.psnr(render, bg, ~m))
        iou0.append(imgcore.iou(d_maps[f] == 0, m))
        iou1.append(imgcore.iou(d_maps[f] == 1, ~m))
    return MetricsRecord(
        psnr_overall=overall,
        psnr_foreground=float(np.mean(fg)) if fg else overall,
        psnr_background=float(np.mean(back)) if back else overall,
        iou_d0=float(np.mean(iou0)),
        iou_d1=float(np.mean(iou1)),
        included_pixel_fraction=float(d_maps.mean()),
    )


# -- sweeps -----------------------------------------------------------------------

def _sweep_one(args):
    scene, cfg, baseline = args
    return train_run(scene, cfg, baseline).metrics


def sweep(scene: Scene, base: TrainConfig, param: str, values,
          baseline: PatchBaselineConfig = PatchBaselineConfig(), jobs: int = 1):
    """One independent run per value of ``param``, in ascending order."""
    values = sorted(values)
    cfgs = [replace(base, **{param: v}) for v in values]
    tasks = [(scene, c, baseline) for c in cfgs]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            metrics = list(ex.map(_sweep_one, tasks))
    else:
        metrics = [_sweep_one(t) for t in tasks]
    return list(zip(values, metrics))


def threshold_sweep(scene, base: TrainConfig, thresholds, baseline=PatchBaselineConfig(), jobs=1):
    for t in thresholds:
        if not 0.0 < t < 1.0:
            raise ValueError(f"threshold {t} outside (0, 1)")
    return sweep(scene, base, "threshold", thresholds, baseline, jobs)


def patch_size_sweep(scene, base: TrainConfig, sizes, baseline=PatchBaselineConfig(), jobs=1):
    return sweep(scene, base, "patch_size", sizes, baseline, jobs)


# -- persistence ------------------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_run(result: RunResult, out, scene_ref: str | None = None) -> Path:
    out = Path(out)
    (out / "d_maps").mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", {
        "train": result.config.to_dict(),
        "baseline": asdict(result.baseline),
        "scene": scene_ref,
        "eval_ranking": EVAL_RANKING,
    })
    field_models.save_model(result.model, out / "model.bin")
    if result.classifier is not None:
        stationary.save_classifier(result.classifier, out / "classifier.bin")
    result.log.write_csv(out / "train_log.csv")
    _write_json(out / "metrics.json", result.metrics.to_dict())
    for f, d in enumerate(result.d_maps):
        imgcore.save_mask(out / "d_maps" / f"{f:03d}.png", d.astype(bool))
    imgcore.save_image(out / "render.png", field_models.render_full(result.model))
    return out


def evaluate_run_dir(run_dir, scene: Scene) -> tuple[np.ndarray, MetricsRecord]:
    """Recompute keep maps and metrics from a saved run's checkpoints."""
    run_dir = Path(run_dir)
    meta = json.loads((run_dir / "config.json").read_text())
    cfg = TrainConfig.from_dict(meta["train"])
    baseline = PatchBaselineConfig(**meta["baseline"])
    model = field_models.load_model(run_dir / "model.bin")
    clf = None
    if (run_dir / "classifier.bin").exists():
        clf = stationary.load_classifier(run_dir / "classifier.bin")
    d_maps = eval_full_frame_D(model, scene, cfg, clf, baseline)
    return d_maps, evaluate_metrics(model, scene, d_maps)
