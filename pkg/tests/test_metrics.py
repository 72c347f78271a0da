import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from cbctmar import metrics
from cbctmar.errors import ZeroReference
from cbctmar.geometry import Volume, VoxelGrid


def vol(a):
    a = np.asarray(a, dtype=float)
    return Volume(a, VoxelGrid(*a.shape, 1.0))


def test_nmse_examples(rng):
    ref = vol(rng.random((8, 8, 8)) + 0.1)
    assert metrics.nmse(ref, ref) == 0
    assert math.isclose(metrics.nmse(vol(2 * ref.data), ref), 1.0)
    x = vol(rng.random((8, 8, 8)))
    num = sum((a - b) ** 2 for a, b in zip(x.data.ravel(), ref.data.ravel()))
    den = sum(b * b for b in ref.data.ravel())
    assert math.isclose(metrics.nmse(x, ref), num / den, rel_tol=1e-12)
    with pytest.raises(ZeroReference):
        metrics.nmse(x, vol(np.zeros((8, 8, 8))))


@given(st.floats(-100, 100).filter(lambda c: abs(c) > 1e-3))
def test_nmse_scale_law(c):
    r = np.random.default_rng(0)
    x, ref = r.random((4, 4, 4)), r.random((4, 4, 4)) + 0.1
    assert math.isclose(metrics.nmse(vol(c * x), vol(c * ref)), metrics.nmse(vol(x), vol(ref)),
                        rel_tol=1e-9)


def test_psnr_examples():
    ref = vol(np.zeros((2, 2, 2)))
    assert metrics.psnr(ref, ref, 1.0) == math.inf
    assert math.isclose(metrics.psnr(vol(np.full((2, 2, 2), 3.0)), ref, 3.0), 0.0, abs_tol=1e-12)
    a = metrics.psnr(vol(np.full((2, 2, 2), 1.0)), ref, 5.0)
    b = metrics.psnr(vol(np.full((2, 2, 2), math.sqrt(0.5))), ref, 5.0)
    assert math.isclose(b - a, 10 * math.log10(2), rel_tol=1e-12)


@given(st.floats(1e-6, 10), st.floats(1e-6, 10))
def test_psnr_decreasing_in_mse(m1, m2):
    ref = vol(np.zeros((2, 2, 2)))
    p1 = metrics.psnr(vol(np.full((2, 2, 2), math.sqrt(m1))), ref, 1.0)
    p2 = metrics.psnr(vol(np.full((2, 2, 2), math.sqrt(m2))), ref, 1.0)
    if m1 < m2:
        assert p1 > p2


def _ssim_brute(x, y, L, size=11, sigma=1.5, k1=0.01, k2=0.03):
    g = np.exp(-((np.arange(size) - size // 2) ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    w = np.outer(g, g)
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            a, b = x[i:i + size, j:j + size], y[i:i + size, j:j + size]
            ma, mb = (w * a).sum(), (w * b).sum()
            va = (w * a * a).sum() - ma * ma
            vb = (w * b * b).sum() - mb * mb
            cov = (w * a * b).sum() - ma * mb
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_examples(rng):
    x = rng.random((16, 16))
    assert math.isclose(metrics.ssim(x, x, 1.0), 1.0)
    assert metrics.ssim(x + 50.0, x, 1.0) < 1.0
    y = rng.random((16, 16))
    assert abs(metrics.ssim(x, y, 1.0) - _ssim_brute(x, y, 1.0)) < 1e-8


@given(hnp.arrays(float, (12, 12), elements=st.floats(0, 1)),
       hnp.arrays(float, (12, 12), elements=st.floats(0, 1)))
def test_ssim_symmetric_and_bounded(a, b):
    s = metrics.ssim(a, b, 1.0)
    assert -1 - 1e-9 <= s <= 1 + 1e-9
    assert math.isclose(s, metrics.ssim(b, a, 1.0), rel_tol=1e-9, abs_tol=1e-12)


def test_ssim_volume_averages_axial_slices(rng):
    a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    want = np.mean([metrics.ssim(a[:, :, k], b[:, :, k], 1.0) for k in range(3)])
    assert math.isclose(metrics.ssim_volume(vol(a), vol(b), 1.0), want)


def test_dice_examples():
    a = np.zeros((10, 10, 10), bool)
    b = np.zeros_like(a)
    assert metrics.dice(a, b) == 1.0
    a[:4] = True
    assert metrics.dice(a, a) == 1.0
    b[6:] = True
    assert metrics.dice(a, b) == 0.0
    c = np.zeros_like(a)
    c[2:6] = True          # half of a overlaps
    assert math.isclose(metrics.dice(a, c), 2 * 200 / 800)


@given(hnp.arrays(bool, (5, 5, 5)), hnp.arrays(bool, (5, 5, 5)))
def test_dice_symmetric(a, b):
    assert metrics.dice(a, b) == metrics.dice(b, a)
    assert 0.0 <= metrics.dice(a, b) <= 1.0
