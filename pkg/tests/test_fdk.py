import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cbctmar.errors import GeometryMismatch
from cbctmar.fdk import (fdk_reconstruct, offset_weight, pad_truncation, ramp_filter,
                         ramp_kernel, truncated_sides)
from cbctmar.geometry import ScanGeometry, Volume, VoxelGrid
from cbctmar.phantom import Cylinder, make_analytic_phantom
from cbctmar.projector import Sinogram, forward_project_mono, subsample


def test_pad_zero_is_identity(rng):
    g = ScanGeometry.circular(2, 100, 8, 3, 1.0)
    s = Sinogram(rng.random(g.shape), g)
    assert pad_truncation(s, 0) is s


def test_pad_replicates_truncated_edge_and_crops_back():
    g = ScanGeometry.circular(1, 100, 6, 1, 1.0)
    row = np.array([0.0, 0.5, 1.0, 1.8, 2.1, 2.3])
    s = Sinogram(row.reshape(g.shape), g)
    assert truncated_sides(s) == (False, True)
    p = pad_truncation(s, 5)
    out = p.values[0, 0]
    assert np.array_equal(out[-5:], np.full(5, 2.3))
    assert np.array_equal(out[:5], np.zeros(5))          # object already ends on the left
    assert np.array_equal(out[5:-5], row)
    # padded detector keeps its centre
    assert np.allclose(p.geometry.u_coords()[5:-5], g.u_coords())


def test_offset_weight_examples():
    d = 3.7
    assert offset_weight(0.0, d) == 0.5
    assert offset_weight(d, d) == 1.0 and offset_weight(-d, d) == 0.0
    assert offset_weight(d / 2, d) + offset_weight(-d / 2, d) == 1.0
    assert offset_weight(10 * d, d) == 1.0 and offset_weight(-10 * d, d) == 0.0


@given(st.floats(-50, 50), st.floats(0.01, 20))
def test_offset_weight_partition_of_unity(u, d):
    w = offset_weight(u, d)
    assert 0.0 <= w <= 1.0
    assert offset_weight(u, d) + offset_weight(-u, d) == 1.0


@given(st.floats(0.01, 20), st.lists(st.floats(-1, 1), min_size=2, max_size=2, unique=True))
def test_offset_weight_monotone(d, pair):
    a, b = sorted(x * 2 * d for x in pair)
    assert offset_weight(a, d) <= offset_weight(b, d)


def test_ramp_kills_dc():
    n = 1024
    out = ramp_filter(np.ones(n), 1.0)
    assert np.abs(out[n // 4:3 * n // 4]).max() < 1e-3


def test_ramp_impulse_gives_kernel():
    n = 33
    row = np.zeros(n)
    row[16] = 1.0
    out = ramp_filter(row, 0.5)
    k, h = ramp_kernel(n, 0.5)
    want = h[(np.arange(n) - 16) + (n - 1)]
    assert np.allclose(out, want, atol=1e-12)
    assert out[16] == pytest.approx(1 / (4 * 0.25))
    assert out[17] == pytest.approx(-1 / (math.pi * 0.5) ** 2)
    assert abs(out[18]) < 1e-12


def direct_ramp(row, du):
    n = len(row)
    k, h = ramp_kernel(n, du)
    return np.array([sum(h[i - j + n - 1] * row[j] for j in range(n)) for i in range(n)])


@pytest.mark.parametrize("n", [64, 127])
def test_ramp_matches_direct(rng, n):
    row = rng.normal(size=n)
    fast = ramp_filter(row, 0.3)
    slow = direct_ramp(row, 0.3)
    assert np.linalg.norm(fast - slow) <= 1e-9 * np.linalg.norm(slow)


# --- reconstruction ----------------------------------------------------------

def water_cylinder(grid, radius=15.0):
    ph = make_analytic_phantom([Cylinder((0, 0, 0), "water", radius=radius, half_length=30.0)],
                               grid)
    return ph.volume({"water": 0.02})


def roi(grid, radius):
    x, y, z = grid.mesh()
    return (np.hypot(x, y) <= radius) & (np.abs(z) <= 6.0)


@pytest.fixture(scope="module")
def setup64():
    grid = VoxelGrid.cube(64, 0.6)
    sym = ScanGeometry.circular(180, 300.0, 120, 64, 0.45, 0.7)
    off = ScanGeometry.circular(180, 300.0, 96, 64, 0.45, 0.7, 10.8)
    vol = water_cylinder(grid)
    full = forward_project_mono(vol, off.full_panel())
    return grid, sym, off, vol, forward_project_mono(vol, sym), subsample(full, off)


def test_zero_sinogram_zero_volume(setup64):
    grid, sym, *_ = setup64
    out = fdk_reconstruct(Sinogram(np.zeros(sym.shape), sym), sym, grid)
    assert not out.data.any()


@pytest.mark.parametrize("which", ["symmetric", "offset"])
def test_water_cylinder_roi_mean(setup64, which, kernel_backend):
    grid, sym, off, vol, s_sym, s_off = setup64
    g, s = (sym, s_sym) if which == "symmetric" else (off, s_off)
    rec = fdk_reconstruct(s, g, grid)
    m = roi(grid, 7.5)
    assert abs(rec.data[m].mean() - 0.02) <= 0.05 * 0.02


def test_linearity(rng):
    g = ScanGeometry.circular(24, 200.0, 32, 16, 0.5, 0.5, 3.0)
    grid = VoxelGrid.cube(12, 0.8)
    p1, p2 = rng.random(g.shape), rng.random(g.shape)
    a, b = 1.7, -0.4
    r = lambda p: fdk_reconstruct(Sinogram(p, g), g, grid, pad_cols=8, weighting="offset").data
    lhs, rhs = r(a * p1 + b * p2), a * r(p1) + b * r(p2)
    assert np.linalg.norm(lhs - rhs) <= 1e-5 * np.linalg.norm(rhs)


def test_rotation_equivariance_quarter_turn():
    grid = VoxelGrid.cube(24, 1.0)
    data = np.zeros(grid.shape)
    data[5:9, 12:20, 8:16] = 0.03
    data[14:18, 3:7, 10:14] = 0.05
    g = ScanGeometry.circular(40, 250.0, 48, 32, 0.8, 0.8)
    s = forward_project_mono(Volume(data, grid), g)
    rec = fdk_reconstruct(s, g, grid).data
    # relabel view b as view b + 10 (beta + pi/2): the object appears rotated by +90 deg
    shifted = Sinogram(np.roll(s.values, 10, axis=0), g)
    rec_rot = fdk_reconstruct(shifted, g, grid).data
    want = np.rot90(rec, 1, axes=(0, 1))
    assert np.linalg.norm(rec_rot - want) <= 1e-6 * np.linalg.norm(want)


def test_offset_weighting_matches_full_on_symmetric_detector(setup64):
    grid, sym, _, vol, s_sym, _ = setup64
    a = fdk_reconstruct(s_sym, sym, grid, weighting="full").data
    b = fdk_reconstruct(s_sym, sym, grid, weighting="offset").data
    m = roi(grid, 12.0)
    assert np.sum((a[m] - b[m]) ** 2) / np.sum(a[m] ** 2) < 0.01


def test_geometry_mismatch(setup64):
    grid, sym, off, _, s_sym, _ = setup64
    with pytest.raises(GeometryMismatch):
        fdk_reconstruct(s_sym, off, grid)
