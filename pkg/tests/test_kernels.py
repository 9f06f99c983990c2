import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from melanopipe.kernels import _numba, _numpy

images = arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(3)))
masks = arrays(np.bool_, st.tuples(st.integers(1, 20), st.integers(1, 20)))


@settings(max_examples=60, deadline=None)
@given(images, st.integers(0, 179), st.integers(0, 179))
def test_hue_mask_backends_agree(img, lo, hi):
    assert np.array_equal(_numpy.hue_mask(img, lo, hi), _numba.hue_mask(img, lo, hi))


@settings(max_examples=60, deadline=None)
@given(masks, st.integers(0, 4))
def test_morphology_backends_agree(mask, r):
    assert np.array_equal(_numpy.erode(mask, r), _numba.erode(mask, r))
    assert np.array_equal(_numpy.dilate(mask, r), _numba.dilate(mask, r))


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 20), st.integers(1, 20), st.just(3))), st.integers(1, 4))
def test_box_downsample_backends_agree(img, f):
    assert np.array_equal(_numpy.box_downsample(img, f), _numba.box_downsample(img, f))


def test_box_downsample_rounds_half_up():
    img = np.array([[[0], [1]], [[0], [1]]], dtype=np.uint8)  # mean 0.5
    assert _numpy.box_downsample(img, 2)[0, 0, 0] == 1


rects = st.lists(st.tuples(st.integers(-20, 120), st.integers(-20, 120), st.integers(1, 70), st.integers(1, 70)),
                 max_size=6)


@settings(max_examples=80, deadline=None)
@given(rects, st.integers(1, 30), st.integers(0, 5), st.integers(0, 5))
def test_tile_coverage_backends_agree_and_match_raster(rs, step, ncols, nrows):
    arr = np.array([[x, y, x + w, y + h] for x, y, w, h in rs], dtype=np.int64).reshape(-1, 4)
    a = _numpy.tile_coverage(arr, 0, 0, step, ncols, nrows)
    b = _numba.tile_coverage(arr, 0, 0, step, ncols, nrows)
    assert np.array_equal(a, b)
    raster = np.zeros((max(nrows * step, 1), max(ncols * step, 1)), dtype=bool)
    for x0, y0, x1, y1 in arr:
        raster[max(y0, 0):max(y1, 0), max(x0, 0):max(x1, 0)] = True
    for j in range(nrows):
        for i in range(ncols):
            assert a[j, i] == raster[j * step:(j + 1) * step, i * step:(i + 1) * step].sum()


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("0", "numba")])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, MELANOPIPE_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from melanopipe import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
