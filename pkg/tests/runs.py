"""Session-wide cache of scenes and training runs shared by the slow tests."""

import time

from distractor_lab.scene_sim import SceneConfig, generate_scene
from distractor_lab.trainer import TrainConfig, train_run

_scenes = {}
_runs = {}
timings = {}
verdicts = {}  # criterion -> (passed, detail), printed in the terminal summary


def scene(seed=0, **kw):
    key = (seed, tuple(sorted(kw.items())))
    if key not in _scenes:
        _scenes[key] = generate_scene(SceneConfig(seed=seed, **kw))
    return _scenes[key]


def run(seed=0, scene_kw=None, **train_kw):
    scene_kw = scene_kw or {}
    cfg = TrainConfig(seed=seed, **train_kw)
    key = (seed, tuple(sorted(scene_kw.items())), cfg)
    if key not in _runs:
        t0 = time.perf_counter()
        _runs[key] = train_run(scene(seed, **scene_kw), cfg)
        timings[key] = time.perf_counter() - t0
    return _runs[key]
