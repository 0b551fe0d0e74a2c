import numpy as np
import pytest
from hypothesis import given, strategies as st

from distractor_lab.baseline_patch import PatchBaselineConfig, inlier_threshold, patch_weights

import oracles


def test_uniform_field_keeps_everything():
    assert patch_weights(np.full((16, 24), 0.3)).all()


def test_small_blob_survives():
    f = np.full((64, 64), 0.01)
    f[30:34, 30:34] = 1.0
    assert patch_weights(f, PatchBaselineConfig(0.9))[24:40, 24:40].all()


def test_textured_block_is_dropped():
    r = np.random.default_rng(0)
    f = np.full((64, 64), 0.01) + r.uniform(0, 1e-3, (64, 64))
    f[16:48, 16:48] = 0.5 + r.random((32, 32))
    w = patch_weights(f, PatchBaselineConfig(0.8))
    assert not w[16:48, 16:48].any()
    assert w[:8].all() and w[-8:].all()


def test_matches_brute_force():
    r = np.random.default_rng(11)
    for i in range(100):
        h, w = 8 * r.integers(1, 5, 2)
        f = r.integers(0, 20, (h, w)) / 19.0  # ties on purpose
        if i % 3 == 0:
            f[r.integers(0, h), :] = 1.0
        cfg = PatchBaselineConfig(float(r.uniform(0.1, 0.95)), float(r.uniform(0.1, 1.0)),
                                  float(r.uniform(0.1, 1.0)))
        thr = None if i % 2 else float(r.uniform(0, 1))
        got = patch_weights(f, cfg, thr)
        want = oracles.patch_weights(f, cfg.inlier_quantile, cfg.smoothing_majority,
                                     cfg.patch_majority, thr)
        assert np.array_equal(got, want)


def test_shared_threshold_equals_own_quantile_when_matching():
    f = np.random.default_rng(2).random((32, 32))
    q = 0.85
    assert np.array_equal(patch_weights(f, PatchBaselineConfig(q)),
                          patch_weights(f, PatchBaselineConfig(q), inlier_threshold(f, q)))


fields = st.integers(0, 2**32 - 1).map(
    lambda s: np.random.default_rng(s).random((8 * (s % 3 + 1), 8 * (s % 4 + 1))))


@given(fields)
def test_constant_on_8x8_patches(f):
    w = patch_weights(f)
    blocks = w.reshape(w.shape[0] // 8, 8, w.shape[1] // 8, 8)
    assert np.all(blocks == blocks[:, :1, :, :1])


@given(fields, st.floats(0.05, 0.9), st.floats(0.01, 0.09))
def test_monotone_in_q(f, q, dq):
    lo = patch_weights(f, PatchBaselineConfig(q))
    hi = patch_weights(f, PatchBaselineConfig(q + dq))
    assert np.all(hi >= lo)


@given(fields, st.floats(1e-3, 1e3))
def test_scale_invariant(f, c):
    # a power of two scales exactly; a general c is checked on integer ranks, whose gaps dwarf rounding
    assert np.array_equal(patch_weights(f), patch_weights(f * 2.0))
    ranks = np.argsort(np.argsort(f.ravel())).reshape(f.shape).astype(float)
    assert np.array_equal(patch_weights(ranks), patch_weights(ranks * c))


def test_validation():
    with pytest.raises(ValueError):
        patch_weights(np.zeros((8, 12)))
    with pytest.raises(ValueError):
        patch_weights(np.zeros(64))
    with pytest.raises(ValueError):
        PatchBaselineConfig(inlier_quantile=1.0)
    with pytest.raises(ValueError):
        PatchBaselineConfig(smoothing_majority=0.0)
