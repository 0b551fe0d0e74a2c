"""Command-line front end.

    distractor-lab generate --out scenes/s0 [--config exp.toml] [--seed N]
    distractor-lab train    --scene scenes/s0 --out runs/r0 [--method entity] ...
    distractor-lab eval     --scene scenes/s0 --run runs/r0 --out runs/r0-eval
    distractor-lab sweep    --scene scenes/s0 --out runs/sw --param threshold --values 0.6,0.7,0.8,0.9
    distractor-lab compare  --scene scenes/s0 --out runs/cmp

A TOML file may hold ``[scene]``, ``[train]`` and ``[baseline]`` tables whose
keys are the config field names, and a ``[run]`` table with the remaining
flags (``out``, ``scene``, ``run``, ``param``, ``values``, ``jobs``,
``frame``); flags override it. Every command writes the
resolved configuration to ``effective_config.json`` in its output directory.
Exit status: 0 on success, 2 on usage errors, 1 when a component fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import field_models, imgcore, scene_sim, trainer
from .baseline_patch import PatchBaselineConfig
from .scene_sim import SceneConfig
from .trainer import TrainConfig

METRIC_COLUMNS = [f.name for f in fields(imgcore.MetricsRecord)]


class UsageError(Exception):
    pass


# -- configuration -------------------------------------------------------------

def _load_toml(path) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    unknown = set(doc) - {"scene", "train", "baseline", "run"}
    if unknown:
        raise UsageError(f"{path}: unknown tables {sorted(unknown)}")
    return doc


def _flag_overrides(args, names) -> dict:
    out = {}
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            out[name] = v
    return out


_SCENE_FLAGS = ("width", "height", "frame_count", "static_entity_count", "mover_count",
                "semantic_noise_rate", "boundary_erosion")
_TRAIN_FLAGS = ("method", "iterations", "learning_rate", "batch_pixels", "patch_size",
                "threshold", "finetune_interval", "model", "fourier_order")
_BASELINE_FLAGS = ("inlier_quantile", "smoothing_majority", "patch_majority")


_RUN_KEYS = ("out", "scene", "run", "param", "values", "jobs", "frame")
_RUN_DEFAULTS = {"param": "threshold", "values": "0.6,0.7,0.8,0.9", "jobs": 1, "frame": 0}


def apply_run_table(args) -> None:
    """Fill flags left unset from the ``[run]`` table, then from defaults."""
    table = _load_toml(args.config).get("run", {})
    unknown = set(table) - set(_RUN_KEYS)
    if unknown:
        raise UsageError(f"unknown [run] keys: {sorted(unknown)}")
    for key in _RUN_KEYS:
        if not hasattr(args, key):
            continue
        if getattr(args, key) is None:
            v = table.get(key, _RUN_DEFAULTS.get(key))
            if key == "values" and isinstance(v, list):
                v = ",".join(str(x) for x in v)
            setattr(args, key, v)
        if getattr(args, key) is None:
            raise UsageError(f"--{key} is required (flag or [run] {key} in the config file)")


def resolve(args, scene_seed: int | None = None) -> tuple[SceneConfig, TrainConfig, PatchBaselineConfig]:
    doc = _load_toml(args.config)
    s = dict(doc.get("scene", {}))
    t = dict(doc.get("train", {}))
    b = dict(doc.get("baseline", {}))
    s.update(_flag_overrides(args, _SCENE_FLAGS))
    t.update(_flag_overrides(args, _TRAIN_FLAGS))
    b.update(_flag_overrides(args, _BASELINE_FLAGS))
    if getattr(args, "no_dilation", False):
        t["dilation_enabled"] = False
    if args.seed is not None:
        s["seed"] = t["seed"] = args.seed
    elif "seed" not in t:
        # one number drives every stream: training inherits the scene seed
        t["seed"] = s.get("seed", 0) if scene_seed is None else scene_seed
    for key in ("mover_size_range", "texture_mix", "mover_speed_range"):
        if key in s:
            s[key] = tuple(s[key])
    known = {f.name for f in fields(PatchBaselineConfig)}
    if set(b) - known:
        raise ValueError(f"unknown baseline config keys: {sorted(set(b) - known)}")
    return SceneConfig.from_dict(s), TrainConfig.from_dict(t), PatchBaselineConfig(**b)


def _echo(out: Path, command: str, scene_cfg=None, train_cfg=None, baseline=None, **extra) -> None:
    doc = {"command": command}
    if scene_cfg is not None:
        doc["scene"] = scene_cfg.to_dict()
    if train_cfg is not None:
        doc["train"] = train_cfg.to_dict()
    if baseline is not None:
        doc["baseline"] = asdict(baseline)
    doc.update(extra)
    (out / "effective_config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_scene_checked(path) -> scene_sim.Scene:
    if not (Path(path) / "scene.json").is_file():
        raise FileNotFoundError(f"{path} is not a scene directory (no scene.json)")
    return scene_sim.load_scene(path)


def _train_cfg_for_scene(args, scene) -> tuple[TrainConfig, PatchBaselineConfig]:
    _, cfg, baseline = resolve(args, scene.config.seed)
    return cfg, baseline


# -- commands --------------------------------------------------------------------

def cmd_generate(args) -> None:
    scene_cfg, _, _ = resolve(args)
    out = _out_dir(args.out)
    scene_sim.save_scene(scene_sim.generate_scene(scene_cfg), out)
    _echo(out, "generate", scene_cfg)
    print(json.dumps({"scene": str(out), "config": scene_cfg.to_dict()}, sort_keys=True))


def cmd_train(args) -> None:
    scene = _load_scene_checked(args.scene)
    cfg, baseline = _train_cfg_for_scene(args, scene)
    out = _out_dir(args.out)
    result = trainer.train_run(scene, cfg, baseline)
    trainer.save_run(result, out, scene_ref=str(args.scene))
    _echo(out, "train", scene.config, cfg, baseline, scene_dir=str(args.scene))
    print(json.dumps(result.metrics.to_dict(), sort_keys=True))


def cmd_eval(args) -> None:
    scene = _load_scene_checked(args.scene)
    if not (Path(args.run) / "model.bin").is_file():
        raise FileNotFoundError(f"{args.run} is not a run directory (no model.bin)")
    d_maps, metrics = trainer.evaluate_run_dir(args.run, scene)
    out = _out_dir(args.out)
    (out / "d_maps").mkdir(exist_ok=True)
    for f, d in enumerate(d_maps):
        imgcore.save_mask(out / "d_maps" / f"{f:03d}.png", d.astype(bool))
    (out / "metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n")
    _echo(out, "eval", scene.config, run_dir=str(args.run), scene_dir=str(args.scene))
    print(json.dumps(metrics.to_dict(), sort_keys=True))


def _parse_values(param: str, text: str) -> list:
    conv = float if param == "threshold" else int
    try:
        return [conv(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be a comma-separated list of {conv.__name__}s") from None


def cmd_sweep(args) -> None:
    scene = _load_scene_checked(args.scene)
    cfg, baseline = _train_cfg_for_scene(args, scene)
    values = _parse_values(args.param, args.values)
    if not values:
        raise UsageError("--values is empty")
    out = _out_dir(args.out)
    if args.param == "threshold":
        rows = trainer.threshold_sweep(scene, cfg, values, baseline, args.jobs)
    else:
        rows = trainer.patch_size_sweep(scene, cfg, values, baseline, args.jobs)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([args.param] + METRIC_COLUMNS)
        for v, m in rows:
            d = m.to_dict()
            w.writerow([v] + [repr(d[c]) for c in METRIC_COLUMNS])
    _echo(out, "sweep", scene.config, cfg, baseline, param=args.param, values=values,
          scene_dir=str(args.scene))
    print(f"wrote {out / 'sweep.csv'} ({len(rows)} runs)")


def _panel(rows: list[list[np.ndarray]], gap: int = 2) -> np.ndarray:
    """Tile equally sized RGB images into a grid separated by white gaps."""
    h, w = rows[0][0].shape[:2]
    ncol = max(len(r) for r in rows)
    canvas = np.ones((len(rows) * (h + gap) - gap, ncol * (w + gap) - gap, 3))
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            canvas[i * (h + gap) : i * (h + gap) + h, j * (w + gap) : j * (w + gap) + w] = img
    return canvas


def cmd_compare(args) -> None:
    scene = _load_scene_checked(args.scene)
    cfg, baseline = _train_cfg_for_scene(args, scene)
    if not 0 <= args.frame < scene.frame_count:
        raise UsageError(f"--frame must lie in [0, {scene.frame_count})")
    out = _out_dir(args.out)
    results = {}
    for method in trainer.METHODS:
        run_cfg = replace(cfg, method=method)
        res = trainer.train_run(scene, run_cfg, baseline)
        trainer.save_run(res, out / "runs" / method, scene_ref=str(args.scene))
        results[method] = res
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method"] + METRIC_COLUMNS)
        for method, res in results.items():
            d = res.metrics.to_dict()
            w.writerow([method] + [repr(d[c]) for c in METRIC_COLUMNS])
    f = args.frame
    frame = scene.frames[f]
    masks, renders = [], []
    for method, res in results.items():
        masks.append(np.repeat(res.d_maps[f][..., None].astype(np.float64), 3, axis=2))
        renders.append(field_models.render_full(res.model))
    truth_mask = np.repeat((~scene.mover_masks[f])[..., None].astype(np.float64), 3, axis=2)
    # top row: input frame then each method's keep mask; bottom: truth then renders
    imgcore.save_image(out / "panel_masks.png", _panel([[frame] + masks]))
    imgcore.save_image(out / "panel_renders.png", _panel([[scene.truth_background] + renders]))
    imgcore.save_image(out / "panel.png", _panel([[frame, truth_mask] + masks,
                                                  [frame, scene.truth_background] + renders]))
    _echo(out, "compare", scene.config, cfg, baseline, frame=f, methods=list(trainer.METHODS),
          scene_dir=str(args.scene))
    for method, res in results.items():
        print(method, json.dumps(res.metrics.to_dict(), sort_keys=True))


# -- parser ------------------------------------------------------------------------

def _add_common(p, scene_flags=False, train_flags=False):
    p.add_argument("--config", help="TOML file with [scene], [train] and [baseline] tables")
    p.add_argument("--seed", type=int, help="seed for every named random stream")
    p.add_argument("--out", help="output directory")
    if scene_flags:
        g = p.add_argument_group("scene")
        g.add_argument("--width", type=int)
        g.add_argument("--height", type=int)
        g.add_argument("--frame-count", dest="frame_count", type=int)
        g.add_argument("--static-entity-count", dest="static_entity_count", type=int)
        g.add_argument("--mover-count", dest="mover_count", type=int)
        g.add_argument("--semantic-noise-rate", dest="semantic_noise_rate", type=float)
        g.add_argument("--boundary-erosion", dest="boundary_erosion", type=int)
    if train_flags:
        p.add_argument("--scene", help="scene directory written by generate")
        g = p.add_argument_group("training")
        g.add_argument("--method", choices=trainer.METHODS)
        g.add_argument("--iterations", type=int)
        g.add_argument("--learning-rate", dest="learning_rate", type=float)
        g.add_argument("--batch-pixels", dest="batch_pixels", type=int)
        g.add_argument("--patch-size", dest="patch_size", type=int)
        g.add_argument("--threshold", type=float)
        g.add_argument("--finetune-interval", dest="finetune_interval", type=int)
        g.add_argument("--no-dilation", dest="no_dilation", action="store_true")
        g.add_argument("--model", choices=sorted(trainer.DEFAULT_LR))
        g.add_argument("--fourier-order", dest="fourier_order", type=int)
        g = p.add_argument_group("patch baseline")
        g.add_argument("--inlier-quantile", dest="inlier_quantile", type=float)
        g.add_argument("--smoothing-majority", dest="smoothing_majority", type=float)
        g.add_argument("--patch-majority", dest="patch_majority", type=float)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distractor-lab", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic scene directory")
    _add_common(g, scene_flags=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one method and write a run directory")
    _add_common(t, train_flags=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="recompute keep maps and metrics from a run directory")
    e.add_argument("--config", help="TOML file; only its [run] table is read")
    e.add_argument("--scene")
    e.add_argument("--run", help="run directory written by train")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval, seed=None)

    s = sub.add_parser("sweep", help="threshold or patch-size sweep")
    _add_common(s, train_flags=True)
    s.add_argument("--param", choices=("threshold", "patch_size"), help="default threshold")
    s.add_argument("--values", help="comma-separated values (default 0.6,0.7,0.8,0.9)")
    s.add_argument("--jobs", type=int, help="parallel runs (default 1)")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare", help="run all four methods on one scene")
    _add_common(c, train_flags=True)
    c.add_argument("--frame", type=int, help="frame shown in the panels (default 0)")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    try:
        apply_run_table(args)
        if getattr(args, "param", None) not in (None, "threshold", "patch_size"):
            raise UsageError("param must be threshold or patch_size")
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, FloatingPointError, KeyError, tomllib.TOMLDecodeError) as exc:
        print(f"{parser.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
