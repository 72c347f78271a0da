import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from scipy.spatial import ConvexHull

from cbctmar._accel import HAVE_NUMBA, backend
from cbctmar.alphashape import (AlphaBoundary, PointCloud, alpha_exposed, alpha_shape_boundary,
                                alpha_shape_brute_force, build_weight_region, extend_shape,
                                rasterize_triangles, triangle_ball_centers, voxelize_shape,
                                weighted_threshold)
from cbctmar.errors import (DegenerateSimplex, GridMismatch, OpenSurface, TooFewPoints,
                            ZeroNormal)
from cbctmar.geometry import Volume, VoxelGrid

TETRA = np.array([[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(3) / 2, 0],
                  [0.5, math.sqrt(3) / 6, math.sqrt(2 / 3)]])
OCTA = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)


def hull_facets(pts):
    return {tuple(sorted(f)) for f in ConvexHull(pts).simplices}


def test_isolated_edge_exposed():
    pts = np.array([[0, 0, 0], [1, 0, 0]], float)
    assert alpha_exposed((0, 1), pts, 10.0)


def test_equilateral_alpha_below_circumradius():
    pts = TETRA[:3]
    assert not alpha_exposed((0, 1, 2), pts, 0.5)
    assert alpha_exposed((0, 1, 2), pts, 0.6)


def test_tetrahedron_face_explicit_centre():
    face = (0, 1, 2)
    assert alpha_exposed(face, TETRA, 1.0)
    centres = triangle_ball_centers(*TETRA[list(face)], 1.0)
    assert len(centres) == 2
    good = [c for c in centres if np.linalg.norm(TETRA[3] - c) > 1.0]
    assert len(good) == 1
    for i in face:
        assert np.linalg.norm(TETRA[i] - good[0]) == pytest.approx(1.0)
    assert good[0][2] < 0                          # on the side away from the apex


def test_collinear_triangle():
    pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]], float)
    with pytest.raises(DegenerateSimplex):
        alpha_exposed((0, 1, 2), pts, 5.0)


@pytest.mark.parametrize("pts", [TETRA, OCTA], ids=["tetra", "octa"])
def test_huge_alpha_gives_convex_hull(pts):
    cloud = PointCloud(pts)
    for b in (alpha_shape_boundary(cloud, 1e6), alpha_shape_brute_force(cloud, 1e6)):
        assert {tuple(sorted(t)) for t in b.triangles} == hull_facets(pts)


def test_too_few_points():
    with pytest.raises(TooFewPoints):
        alpha_shape_boundary(PointCloud(TETRA[:3]), 1.0)


def test_point_cloud_dedupes():
    c = PointCloud(np.vstack([TETRA, TETRA[:2]]))
    assert len(c) == 4
    with pytest.raises(ValueError):
        PointCloud([[0, 0, np.nan]])


@settings(max_examples=60)
@given(hnp.arrays(float, st.tuples(st.integers(4, 12), st.just(3)),
                  elements=st.floats(-5, 5, allow_subnormal=False)),
       st.floats(0.5, 15))
def test_delaunay_path_equals_brute_force(pts, alpha):
    # general position: snap to a coarse lattice plus a tiny seeded jitter
    pts = np.round(pts, 1) + np.random.default_rng(0).normal(0, 1e-3, pts.shape)
    cloud = PointCloud(pts)
    fast = alpha_shape_boundary(cloud, alpha, lower=True)
    slow = alpha_shape_brute_force(cloud, alpha, lower=True)
    assert fast.simplex_set() == slow.simplex_set()


def fibonacci_sphere(n, r):
    k = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * k / n)
    th = math.pi * (1 + 5 ** 0.5) * k
    return r * np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], 1)


@pytest.fixture(scope="module")
def sphere_shape():
    cloud = PointCloud(fibonacci_sphere(500, 10.0))
    return cloud, alpha_shape_boundary(cloud, 11.0)


def test_sphere_tiling(sphere_shape):
    cloud, b = sphere_shape
    p = cloud.points
    centres = p[b.triangles].mean(axis=1)
    assert np.abs(np.linalg.norm(centres, axis=1) - 10).max() < 0.5
    assert np.all((b.normals * centres).sum(axis=1) > 0)          # outward
    assert set(np.unique(b.triangles)) == set(range(len(p)))
    # closed 2-manifold: each edge shared by exactly two faces
    e = np.sort(np.concatenate([b.triangles[:, [0, 1]], b.triangles[:, [1, 2]],
                                b.triangles[:, [0, 2]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    assert np.all(counts == 2)
    # orientation agrees with the stored normals
    a, bb, c = (p[b.triangles[:, i]] for i in range(3))
    assert np.all((np.cross(bb - a, c - a) * b.normals).sum(axis=1) > 0)


def test_extend_sphere(sphere_shape):
    cloud, b = sphere_shape
    moved, ext = extend_shape(b, cloud, 2.0)
    r = np.linalg.norm(moved.points, axis=1)
    assert np.all(np.abs(r - 12.0) <= 0.3)
    assert np.array_equal(ext.triangles, b.triangles)
    same, _ = extend_shape(b, cloud, 0.0)
    assert np.array_equal(same.points, cloud.points)


def plate():
    xs, ys = np.meshgrid(np.arange(4.0), np.arange(4.0), indexing="ij")
    pts = np.stack([xs.ravel(), ys.ravel(), np.zeros(16)], 1)
    tris = []
    for i in range(3):
        for j in range(3):
            a, b, c, d = 4 * i + j, 4 * (i + 1) + j, 4 * (i + 1) + j + 1, 4 * i + j + 1
            tris += [(a, b, c), (a, c, d)]
    tris = np.array(tris)
    return pts, AlphaBoundary(pts, tris, np.tile([0.0, 0.0, 1.0], (len(tris), 1)))


def test_flat_plate_moves_along_normal():
    pts, b = plate()
    moved, _ = extend_shape(b, PointCloud(pts, dedupe=False), 1.5)
    assert np.array_equal(moved.points[:, :2], pts[:, :2])
    assert np.all(moved.points[:, 2] == 1.5)


def test_zero_normal_vertex_is_skipped():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0]], float)
    tris = np.array([[0, 1, 2], [0, 3, 1]])
    b = AlphaBoundary(pts, tris, np.array([[0, 0, 1.0], [0, 0, -1.0]]))
    with pytest.warns(ZeroNormal):
        moved, _ = extend_shape(b, PointCloud(pts, dedupe=False), 1.0)
    assert np.array_equal(moved.points[[0, 1]], pts[[0, 1]])
    assert moved.points[2, 2] == 1.0 and moved.points[3, 2] == -1.0


def box_mesh(lo, hi, steps=1):
    """Outward-oriented triangulated box with ``steps`` subdivisions per edge."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    pts, tris = [], []
    for axis in range(3):
        for side in (0, 1):
            u, v = [a for a in range(3) if a != axis]
            base = len(pts)
            for i in range(steps + 1):
                for j in range(steps + 1):
                    p = np.empty(3)
                    p[axis] = hi[axis] if side else lo[axis]
                    p[u] = lo[u] + (hi[u] - lo[u]) * i / steps
                    p[v] = lo[v] + (hi[v] - lo[v]) * j / steps
                    pts.append(p)
            for i in range(steps):
                for j in range(steps):
                    a = base + i * (steps + 1) + j
                    b, c, d = a + steps + 1, a + steps + 2, a + 1
                    tris += [(a, b, c), (a, c, d)]
    pts, tris = np.array(pts), np.array(tris)
    centre = 0.5 * (lo + hi)
    n = np.cross(pts[tris[:, 1]] - pts[tris[:, 0]], pts[tris[:, 2]] - pts[tris[:, 0]])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    flip = (n * (pts[tris].mean(1) - centre)).sum(1) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    n[flip] *= -1
    return AlphaBoundary(pts, tris, n)


@pytest.mark.parametrize("n", [6, 10])
def test_voxelized_cube_counts(n):
    grid = VoxelGrid.cube(n + 6, 1.0)
    lo = grid.voxel_centers([3, 3, 3]) - 0.5
    mask = voxelize_shape(box_mesh(lo, lo + n), grid)
    shell = n ** 3 - (n - 2) ** 3
    assert mask.sum() == (n - 2) ** 3 + shell == n ** 3
    assert mask[3:3 + n, 3:3 + n, 3:3 + n].all()


def test_voxelized_sphere_volume():
    grid = VoxelGrid.cube(48, 0.5)
    pts = fibonacci_sphere(2000, 10.0)
    hull = ConvexHull(pts)
    tris = hull.simplices.copy()
    n = hull.equations[:, :3]
    a, b, c = (pts[tris[:, i]] for i in range(3))
    flip = (np.cross(b - a, c - a) * n).sum(1) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    mask = voxelize_shape(AlphaBoundary(pts, tris, n), grid)
    vol = mask.sum() * 0.5 ** 3
    assert abs(vol - 4 / 3 * math.pi * 1000) <= 0.05 * 4 / 3 * math.pi * 1000


def test_small_gap_is_sealed():
    grid = VoxelGrid.cube(16, 1.0)
    lo = grid.voxel_centers([3, 3, 3]) - 0.5
    b = box_mesh(lo, lo + 10, steps=10)
    holed = AlphaBoundary(b.points, b.triangles[2:], b.normals[2:])
    mask = voxelize_shape(holed, grid)
    assert mask.sum() >= 8 ** 3


def test_flat_mesh_is_open_surface():
    pts, b = plate()
    with pytest.raises(OpenSurface):
        voxelize_shape(AlphaBoundary(pts + 2.0, b.triangles, b.normals), VoxelGrid.cube(12, 1.0))


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba missing")
def test_rasterizer_backends_agree():
    grid = VoxelGrid.cube(32, 0.7)
    cloud = PointCloud(fibonacci_sphere(300, 8.0) + 0.13)
    b = alpha_shape_boundary(cloud, 9.0)
    with backend("numba"):
        s1, i1 = rasterize_triangles(b.points, b.triangles, grid, b.normals)
    with backend("numpy"):
        s2, i2 = rasterize_triangles(b.points, b.triangles, grid, b.normals)
    assert np.array_equal(s1, s2) and np.array_equal(i1, i2)


def cube_mask(shape, lo, size):
    m = np.zeros(shape, bool)
    m[lo:lo + size, lo:lo + size, lo:lo + size] = True
    return m


def shell(m):
    from scipy import ndimage
    return m & ~ndimage.binary_erosion(m)


def test_weight_region_examples():
    inner = cube_mask((24, 24, 24), 7, 10)
    outer = cube_mask((24, 24, 24), 2, 20)
    assert not build_weight_region(shell(inner), inner).any()
    assert np.array_equal(build_weight_region(np.zeros_like(inner), outer), outer)
    region = build_weight_region(shell(inner), outer)
    assert region.sum() == 20 ** 3 - 10 ** 3 == 7000
    assert not (region & inner).any()
    with pytest.raises(GridMismatch):
        build_weight_region(inner[:-1], outer)


def test_weighted_threshold_cases():
    tau = 0.045
    v = np.array([10 * tau, tau, tau - 1e-9, 10 * tau]).reshape(4, 1, 1)
    region = np.array([True, False, False, False]).reshape(4, 1, 1)
    out = weighted_threshold(Volume(v, VoxelGrid(4, 1, 1, 1.0)), region, tau)
    assert out.ravel().tolist() == [False, True, False, True]
    with pytest.raises(GridMismatch):
        weighted_threshold(v, region[:-1], tau)


@given(hnp.arrays(float, (6, 6, 6), elements=st.floats(0, 1)), hnp.arrays(bool, (6, 6, 6)),
       st.floats(0, 1))
def test_weighted_threshold_zero_on_region(v, region, tau):
    out = weighted_threshold(v, region, tau)
    assert out.dtype == bool
    assert not out[region].any()
    assert np.array_equal(out[~region], v[~region] >= tau)
