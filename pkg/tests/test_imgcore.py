import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from distractor_lab import imgcore
from distractor_lab.imgcore import dilate3x3, iou, psnr

import oracles


def test_psnr_identical_is_ceiling():
    x = np.full((4, 5, 3), 0.3)
    assert psnr(x, x) == 100.0 == imgcore.PSNR_CEILING


def test_psnr_constant_offset():
    a = np.full((6, 6, 3), 0.5)
    assert psnr(a + 0.1, a) == pytest.approx(20.0, abs=1e-9)


def test_psnr_region_matches_loop(rng):
    for _ in range(5):
        a, b = rng.random((9, 7, 3)), rng.random((9, 7, 3))
        m = rng.random((9, 7)) < 0.4
        m[0, 0] = True
        assert abs(psnr(a, b, m) - oracles.psnr(a, b, m)) <= 1e-12
        assert abs(psnr(a, b) - oracles.psnr(a, b)) <= 1e-12


def test_psnr_errors():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2, 3)), np.zeros((3, 2, 3)))
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2, 3)), np.zeros((2, 2, 3)), np.zeros((2, 2), bool))


def test_iou_examples(rng):
    m = np.zeros((5, 5), bool)
    m[1:3, 1:3] = True
    assert iou(m, m) == 1.0
    assert iou(m, np.roll(m, 3, axis=1)) == 0.0
    assert iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0
    a, b = rng.random((16, 16)) < 0.5, rng.random((16, 16)) < 0.5
    assert iou(a, b) == oracles.iou(a, b)
    with pytest.raises(ValueError):
        iou(np.zeros((2, 2)), np.zeros((2, 3)))


def test_dilate_examples():
    m = np.zeros((11, 11), bool)
    m[5, 5] = True
    want = np.zeros_like(m)
    want[4:7, 4:7] = True
    assert np.array_equal(dilate3x3(m), want)
    assert not dilate3x3(np.zeros((11, 11), bool)).any()
    c = np.zeros((6, 6), bool)
    c[0, 0] = True
    assert np.array_equal(np.argwhere(dilate3x3(c)), [[0, 0], [0, 1], [1, 0], [1, 1]])


def test_dilate_matches_two_oracles(rng):
    for _ in range(20):
        h, w = rng.integers(1, 14, 2)
        m = rng.random((h, w)) < rng.uniform(0.02, 0.4)
        got = dilate3x3(m)
        assert np.array_equal(got, oracles.dilate(m))
        assert np.array_equal(got, ndimage.binary_dilation(m, np.ones((3, 3), bool)))


masks = arrays(bool, st.tuples(st.integers(1, 10), st.integers(1, 10)))


@given(masks, st.data())
def test_iou_symmetric_bounded(a, data):
    b = data.draw(arrays(bool, a.shape))
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    if a.any():
        assert iou(a, a) == 1.0


@given(arrays(np.float64, (4, 3, 3), elements=st.floats(0, 1)),
       arrays(np.float64, (4, 3, 3), elements=st.floats(0, 1)))
def test_psnr_symmetric_and_ceiling(a, b):
    assert psnr(a, b) == psnr(b, a)
    assert psnr(a, a) == imgcore.PSNR_CEILING


@given(masks, st.data())
def test_dilation_extensive_and_distributes_over_union(a, data):
    b = data.draw(arrays(bool, a.shape))
    assert np.all(dilate3x3(a) >= a)
    assert np.array_equal(dilate3x3(a | b), dilate3x3(a) | dilate3x3(b))


def test_png_roundtrips(tmp_path, rng):
    img = np.round(rng.random((5, 7, 3)) * 255) / 255
    imgcore.save_image(tmp_path / "a.png", img)
    assert np.array_equal(imgcore.load_image(tmp_path / "a.png"), img)
    m = rng.random((5, 7)) < 0.5
    imgcore.save_mask(tmp_path / "m.png", m)
    assert np.array_equal(imgcore.load_mask(tmp_path / "m.png"), m)
    ids = rng.integers(0, 65536, (5, 7))
    imgcore.save_u16(tmp_path / "i.png", ids)
    assert np.array_equal(imgcore.load_u16(tmp_path / "i.png"), ids)


def test_image_validation():
    with pytest.raises(ValueError):
        imgcore.as_image(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        imgcore.as_image(np.full((2, 2, 3), 1.5))
    with pytest.raises(ValueError):
        imgcore.as_mask(np.zeros(4))
