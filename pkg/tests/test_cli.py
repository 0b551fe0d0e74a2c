import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from distractor_lab.cli import main

SCENE_TOML = """
[scene]
width = 64
height = 64
frame_count = 6
static_entity_count = 12
mover_count = 3
mover_size_range = [3, 16]
seed = 4

[train]
iterations = 150
batch_pixels = 1024

[baseline]
inlier_quantile = 0.9
"""


def _digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "exp.toml").write_text(SCENE_TOML)
    assert main(["generate", "--config", str(root / "exp.toml"), "--out", str(root / "scene")]) == 0
    return root


def test_generate_twice_identical(work):
    assert main(["generate", "--config", str(work / "exp.toml"), "--out", str(work / "scene2")]) == 0
    assert _digest(work / "scene") == _digest(work / "scene2")


def test_flags_override_file_and_config_is_echoed(work):
    out = work / "flagged"
    assert main(["generate", "--config", str(work / "exp.toml"), "--out", str(out),
                 "--mover-count", "1", "--seed", "9"]) == 0
    echo = json.loads((out / "effective_config.json").read_text())
    assert echo["scene"]["mover_count"] == 1 and echo["scene"]["seed"] == 9
    assert echo["scene"]["width"] == 64
    assert json.loads((out / "scene.json").read_text())["config"]["mover_count"] == 1


def test_train_then_eval_fixed_point(work):
    scene, run, ev = work / "scene", work / "run", work / "eval"
    before = _digest(scene)
    assert main(["train", "--config", str(work / "exp.toml"), "--scene", str(scene),
                 "--out", str(run), "--method", "entity"]) == 0
    assert main(["eval", "--scene", str(scene), "--run", str(run), "--out", str(ev)]) == 0
    assert (run / "metrics.json").read_text() == (ev / "metrics.json").read_text()
    for f in range(6):
        name = f"d_maps/{f:03d}.png"
        assert (run / name).read_bytes() == (ev / name).read_bytes()
    assert _digest(scene) == before  # inputs untouched
    meta = json.loads((run / "config.json").read_text())
    assert meta["eval_ranking"] == "per-frame" and meta["train"]["iterations"] == 150


def test_compare_matches_individual_runs(work):
    out = work / "cmp"
    assert main(["compare", "--config", str(work / "exp.toml"), "--scene", str(work / "scene"),
                 "--out", str(out)]) == 0
    with open(out / "compare.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["mse", "robust-patch", "earr", "entity"]
    assert list(rows[0]) == ["method", "psnr_overall", "psnr_foreground", "psnr_background",
                             "iou_d0", "iou_d1", "included_pixel_fraction"]
    for r in rows:
        single = work / f"single-{r['method']}"
        assert main(["train", "--config", str(work / "exp.toml"), "--scene", str(work / "scene"),
                     "--out", str(single), "--method", r["method"]]) == 0
        m = json.loads((single / "metrics.json").read_text())
        assert {k: float(v) for k, v in r.items() if k != "method"} == m
    for name in ("panel.png", "panel_masks.png", "panel_renders.png"):
        assert (out / name).stat().st_size > 0


def test_sweep_writes_csv(work):
    out = work / "sweep"
    assert main(["sweep", "--config", str(work / "exp.toml"), "--scene", str(work / "scene"),
                 "--out", str(out), "--values", "0.9,0.7", "--method", "earr"]) == 0
    rows = list(csv.reader(open(out / "sweep.csv")))
    assert rows[0][0] == "threshold" and [r[0] for r in rows[1:]] == ["0.7", "0.9"]


def test_run_table_supplies_flags(work):
    cfg = work / "run.toml"
    cfg.write_text(SCENE_TOML + f'\n[run]\nscene = "{work / "scene"}"\nout = "{work / "tabled"}"\n'
                   'param = "patch_size"\nvalues = [16, 32]\n')
    assert main(["sweep", "--config", str(cfg), "--method", "mse"]) == 0
    assert (work / "tabled" / "sweep.csv").read_text().startswith("patch_size,")


@pytest.mark.parametrize("argv, code", [
    (["frobnicate"], 2),
    (["train", "--out", "x"], 2),  # no --scene anywhere
    (["sweep", "--scene", "SCENE", "--out", "OUT", "--values", "a,b"], 2),
    (["train", "--scene", "/nonexistent/scene", "--out", "OUT"], 1),
    (["train", "--scene", "SCENE", "--out", "OUT", "--threshold", "1.5"], 1),
    (["generate", "--out", "OUT", "--width", "0"], 1),
])
def test_exit_codes(work, argv, code):
    argv = [a.replace("SCENE", str(work / "scene")).replace("OUT", str(work / "bad")) for a in argv]
    if code == 2 and argv[0] == "frobnicate":
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2
    else:
        assert main(argv) == code


def test_console_entry_point(work):
    p = subprocess.run([sys.executable, "-m", "distractor_lab.cli", "generate", "--out",
                        str(work / "sub"), "--width", "32", "--height", "32", "--frame-count", "2",
                        "--static-entity-count", "4", "--mover-count", "0"],
                       capture_output=True, text=True)
    assert p.returncode == 0, p.stderr
    assert json.loads(p.stdout)["config"]["width"] == 32
