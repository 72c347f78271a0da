"""Alpha shapes of intra-oral scan point clouds and the weighted thresholding built on them.

A simplex spanned by a subset ``T`` of the cloud (1 to 3 points) is
*alpha-exposed* when some open ball of radius ``alpha`` contains no cloud
point and its sphere passes through exactly the points of ``T``.  The
boundary of the alpha shape is the set of exposed simplices.

Two enumeration routes are provided: :func:`alpha_shape_boundary` takes
candidates from the Delaunay tetrahedralisation and tests emptiness with a
k-d tree, :func:`alpha_shape_brute_force` tries every tuple with the scalar
predicate :func:`alpha_exposed`.  Both must agree exactly.
"""
from dataclasses import dataclass, field
from itertools import combinations
import logging
import math
import warnings

import numpy as np
from scipy import ndimage
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import (DegenerateSimplex, GridMismatch, OpenSurface, TooFewPoints,
                     ZeroNormal)
from .geometry import Volume
from .kernels import rasterize_crossings

log = logging.getLogger(__name__)

DEGENERATE_EPS = 1e-9
BRUTE_FORCE_LIMIT = 200


def _tol(alpha):
    return 1e-9 * max(1.0, alpha)


@dataclass
class PointCloud:
    """Finite 3-D points in mm; exact duplicates are dropped (first kept)."""

    points: np.ndarray
    dedupe: bool = field(default=True, repr=False)

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.dedupe and len(p):
            _, first = np.unique(p, axis=0, return_index=True)
            p = p[np.sort(first)]
        self.points = p

    def __len__(self):
        return len(self.points)


@dataclass
class AlphaBoundary:
    """Exposed simplices of an alpha shape.

    ``triangles`` are oriented so that ``(b - a) x (c - a)`` points along the
    matching row of ``normals`` (towards the empty ball).  ``edges`` and
    ``vertices`` are only filled when lower-dimensional simplices were
    requested.
    """

    points: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray
    edges: np.ndarray = None
    vertices: np.ndarray = None
    two_sided: np.ndarray = None

    def simplex_set(self):
        out = {tuple(sorted(int(i) for i in t)) for t in self.triangles}
        if self.edges is not None:
            out |= {tuple(sorted(int(i) for i in e)) for e in self.edges}
        if self.vertices is not None:
            out |= {(int(v),) for v in self.vertices}
        return out

    def boundary_vertices(self):
        return np.unique(self.triangles)


# --------------------------------------------------------------------------
# exact exposure predicates
# --------------------------------------------------------------------------

def _circumcircle(a, b, c):
    ab = b - a
    ac = c - a
    n = np.cross(ab, ac)
    nn = n @ n
    if math.sqrt(nn) < DEGENERATE_EPS:
        raise DegenerateSimplex("collinear or coincident triangle")
    center = a + (np.cross(n, ab) * (ac @ ac) + np.cross(ac, n) * (ab @ ab)) / (2 * nn)
    return center, float(np.linalg.norm(center - a)), n / math.sqrt(nn)


def _orthonormal(axis):
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def _arcs_cover_circle(arcs):
    """True if closed arcs ``(center_angle, half_width)`` cover the whole circle."""
    if not arcs:
        return False
    intervals = []
    for center, half in arcs:
        if half >= math.pi:
            return True
        lo = (center - half) % (2 * math.pi)
        hi = lo + 2 * half
        if hi > 2 * math.pi:
            intervals.append((lo, 2 * math.pi))
            intervals.append((0.0, hi - 2 * math.pi))
        else:
            intervals.append((lo, hi))
    intervals.sort()
    reach = 0.0
    for lo, hi in intervals:
        if lo > reach + 1e-12:
            return False
        reach = max(reach, hi)
    return reach >= 2 * math.pi - 1e-12


def _covered_arc(k_cos, k_sin, rhs):
    """Set of phi with ``k_cos cos(phi) + k_sin sin(phi) >= rhs`` as an arc.

    Returns ``None`` (empty), ``"all"``, or ``(center, half_width)``.
    """
    k = math.hypot(k_cos, k_sin)
    if k < 1e-15:
        return "all" if rhs <= 0 else None
    s = rhs / k
    if s <= -1:
        return "all"
    if s > 1:
        return None
    return math.atan2(k_sin, k_cos), math.acos(s)


def _edge_exposed(p, q, others, alpha, tol):
    m = 0.5 * (p + q)
    half = 0.5 * np.linalg.norm(q - p)
    if half < DEGENERATE_EPS:
        raise DegenerateSimplex("coincident edge endpoints")
    if alpha < half:
        return False
    rho = math.sqrt(max(alpha * alpha - half * half, 0.0))
    e1, e2 = _orthonormal(q - p)
    arcs = []
    lim = (alpha + tol) ** 2
    for o in others:
        w = m - o
        # ball centre m + rho (cos e1 + sin e2) is blocked by o when |c - o| <= alpha + tol
        arc = _covered_arc(-2 * rho * (w @ e1), -2 * rho * (w @ e2), w @ w + rho * rho - lim)
        if arc == "all":
            return False
        if arc is not None:
            arcs.append(arc)
    return not _arcs_cover_circle(arcs)


def _vertex_exposed(p, others, alpha, tol):
    caps = []
    for o in others:
        d = o - p
        dist = float(np.linalg.norm(d))
        if dist < DEGENERATE_EPS:
            raise DegenerateSimplex("duplicate point")
        cos_t = (dist * dist + alpha * alpha - (alpha + tol) ** 2) / (2 * alpha * dist)
        if cos_t > 1:
            continue
        if cos_t <= -1:
            return False
        caps.append((d / dist, cos_t))
    if not caps:
        return True
    for i, (ui, ci) in enumerate(caps):
        si = math.sqrt(max(1 - ci * ci, 0.0))
        e1, e2 = _orthonormal(ui)
        arcs = []
        blocked = False
        for j, (uj, cj) in enumerate(caps):
            if j == i:
                continue
            arc = _covered_arc(si * (e1 @ uj), si * (e2 @ uj), cj - ci * (ui @ uj))
            if arc == "all":
                blocked = True
                break
            if arc is not None:
                arcs.append(arc)
        if not blocked and not _arcs_cover_circle(arcs):
            return True
    return False


def triangle_ball_centers(a, b, c, alpha):
    """The (at most two) centres of radius-``alpha`` spheres through a triangle."""
    center, r, n = _circumcircle(a, b, c)
    if alpha < r:
        return []
    h = math.sqrt(max(alpha * alpha - r * r, 0.0))
    return [center + h * n, center - h * n]


def alpha_exposed(simplex, cloud, alpha):
    """Exact alpha-exposure test for a vertex, edge or triangle of ``cloud``.

    ``simplex`` holds 1 to 3 point indices.  Returns False when ``alpha`` is
    too small for any sphere to pass through all points of the simplex.
    """
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    idx = tuple(int(i) for i in simplex)
    if not 1 <= len(idx) <= 3 or len(set(idx)) != len(idx):
        raise ValueError("a simplex needs 1 to 3 distinct point indices")
    mask = np.ones(len(pts), dtype=bool)
    mask[list(idx)] = False
    others = pts[mask]
    tol = _tol(alpha)
    if len(idx) == 3:
        for c in triangle_ball_centers(*pts[list(idx)], alpha):
            if len(others) == 0 or np.min(np.linalg.norm(others - c, axis=1)) > alpha + tol:
                return True
        return False
    if len(idx) == 2:
        return _edge_exposed(pts[idx[0]], pts[idx[1]], others, alpha, tol)
    return _vertex_exposed(pts[idx[0]], others, alpha, tol)


# --------------------------------------------------------------------------
# boundary enumeration
# --------------------------------------------------------------------------

def _oriented(pts, tri, normal):
    a, b, c = pts[list(tri)]
    if np.cross(b - a, c - a) @ normal < 0:
        return np.array([tri[0], tri[2], tri[1]])
    return np.asarray(tri)


def _assemble(pts, found, edges=None, vertices=None):
    tris, normals, two = [], [], []
    for tri, (normal, both) in sorted(found.items()):
        tris.append(_oriented(pts, tri, normal))
        normals.append(normal)
        two.append(both)
    return AlphaBoundary(
        pts,
        np.array(tris, dtype=np.int64).reshape(-1, 3),
        np.array(normals, dtype=float).reshape(-1, 3),
        None if edges is None else np.array(sorted(edges), dtype=np.int64).reshape(-1, 2),
        None if vertices is None else np.array(sorted(vertices), dtype=np.int64),
        np.array(two, dtype=bool),
    )


def alpha_shape_brute_force(cloud, alpha, lower=True):
    """Reference enumeration over every 1-, 2- and 3-subset of the cloud."""
    pts = cloud.points
    n = len(pts)
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force is limited to {BRUTE_FORCE_LIMIT} points")
    if n < 4:
        raise TooFewPoints("need at least 4 points for a 3-D alpha shape")
    tol = _tol(alpha)
    found = {}
    for tri in combinations(range(n), 3):
        a, b, c = pts[list(tri)]
        try:
            centers = triangle_ball_centers(a, b, c, alpha)
        except DegenerateSimplex:
            continue
        mask = np.ones(n, dtype=bool)
        mask[list(tri)] = False
        ok = [np.min(np.linalg.norm(pts[mask] - cc, axis=1)) > alpha + tol for cc in centers]
        if any(ok):
            _, _, normal = _circumcircle(a, b, c)
            found[tri] = (normal if ok[0] else -normal, all(ok))
    edges = vertices = None
    if lower:
        edges = [e for e in combinations(range(n), 2) if alpha_exposed(e, pts, alpha)]
        vertices = [i for i in range(n) if alpha_exposed((i,), pts, alpha)]
    return _assemble(pts, found, edges, vertices)


def _delaunay_candidates(pts):
    tri = Delaunay(pts)
    simp = tri.simplices
    faces = np.concatenate([simp[:, [0, 1, 2]], simp[:, [0, 1, 3]],
                            simp[:, [0, 2, 3]], simp[:, [1, 2, 3]]])
    faces = np.unique(np.sort(faces, axis=1), axis=0)
    edges = np.concatenate([simp[:, [i, j]] for i, j in combinations(range(4), 2)])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    return faces, edges


def _triangle_geometry(pts, faces):
    a, b, c = pts[faces[:, 0]], pts[faces[:, 1]], pts[faces[:, 2]]
    ab, ac = b - a, c - a
    n = np.cross(ab, ac)
    nn = (n * n).sum(axis=1)
    good = np.sqrt(nn) >= DEGENERATE_EPS
    nn = np.where(good, nn, 1.0)
    center = a + (np.cross(n, ab) * (ac * ac).sum(1)[:, None]
                  + np.cross(ac, n) * (ab * ab).sum(1)[:, None]) / (2 * nn[:, None])
    radius = np.linalg.norm(center - a, axis=1)
    unit = n / np.sqrt(nn)[:, None]
    return center, radius, unit, good


def alpha_shape_boundary(cloud, alpha, lower=False):
    """Exposed triangles (and optionally edges/vertices) via Delaunay candidates.

    Every exposed simplex has an empty circumsphere, so it is a face of the
    Delaunay tetrahedralisation; only those faces are tested.  Clouds that
    Qhull cannot triangulate (e.g. all coplanar) fall back to brute force
    when small enough.
    """
    pts = cloud.points
    if len(pts) < 4:
        raise TooFewPoints("need at least 4 points for a 3-D alpha shape")
    try:
        faces, edge_cands = _delaunay_candidates(pts)
    except QhullError:
        if len(pts) <= BRUTE_FORCE_LIMIT:
            return alpha_shape_brute_force(cloud, alpha, lower)
        raise
    tol = _tol(alpha)
    tree = cKDTree(pts)
    center, radius, unit, good = _triangle_geometry(pts, faces)
    fits = good & (radius <= alpha)
    h = np.sqrt(np.clip(alpha * alpha - radius ** 2, 0.0, None))
    found = {}
    for k in np.flatnonzero(fits):
        tri = faces[k]
        ok = []
        for sign in (1.0, -1.0):
            hits = tree.query_ball_point(center[k] + sign * h[k] * unit[k], alpha + tol)
            ok.append(all(i in tri for i in hits))
        if ok[0] or ok[1]:
            found[tuple(int(i) for i in tri)] = (unit[k] if ok[0] else -unit[k], ok[0] and ok[1])
    edges = vertices = None
    if lower:
        edges = []
        for p, q in edge_cands:
            half = 0.5 * np.linalg.norm(pts[q] - pts[p])
            if alpha < half:
                continue
            rho = math.sqrt(alpha * alpha - half * half)
            near = [i for i in tree.query_ball_point(0.5 * (pts[p] + pts[q]), rho + alpha + tol)
                    if i != p and i != q]
            if _edge_exposed(pts[p], pts[q], pts[near], alpha, tol):
                edges.append((int(p), int(q)))
        vertices = []
        for i in range(len(pts)):
            near = [j for j in tree.query_ball_point(pts[i], 2 * alpha + tol) if j != i]
            if _vertex_exposed(pts[i], pts[near], alpha, tol):
                vertices.append(i)
    return _assemble(pts, found, edges, vertices)


# --------------------------------------------------------------------------
# extension, voxelisation, weighted thresholding
# --------------------------------------------------------------------------

def _face_normals(points, triangles):
    a, b, c = (points[triangles[:, i]] for i in range(3))
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(norm > 0, norm, 1.0)


def extend_shape(boundary, cloud, distance):
    """Push every boundary vertex ``distance`` mm along its mean face normal.

    Returns the moved cloud and a boundary with the same connectivity.
    Vertices whose incident normals cancel stay in place (a
    :class:`ZeroNormal` warning is issued).
    """
    pts = np.array(cloud.points if isinstance(cloud, PointCloud) else cloud, dtype=float)
    tris = boundary.triangles
    if len(tris) == 0:
        raise ValueError("boundary has no faces to extend")
    acc = np.zeros_like(pts)
    count = np.zeros(len(pts))
    for i in range(3):
        np.add.at(acc, tris[:, i], boundary.normals)
        np.add.at(count, tris[:, i], 1)
    moved = pts.copy()
    if distance != 0:
        verts = np.flatnonzero(count)
        norms = np.linalg.norm(acc[verts], axis=1)
        zero = norms < 1e-12
        if np.any(zero):
            warnings.warn(f"{int(zero.sum())} vertices have cancelling normals and were not moved",
                          ZeroNormal)
            log.warning("extend_shape: %d zero-normal vertices skipped", int(zero.sum()))
        v = verts[~zero]
        moved[v] += distance * acc[v] / norms[~zero, None]
    normals = _face_normals(moved, tris)
    flip = (normals * boundary.normals).sum(axis=1) < 0
    normals[flip] *= -1
    ext = AlphaBoundary(moved, tris.copy(), normals, boundary.edges, boundary.vertices,
                        boundary.two_sided)
    return PointCloud(moved, dedupe=False), ext


def rasterize_triangles(points, triangles, grid, normals=None):
    """Surface voxels of a triangle set plus a centre-inside flag per voxel.

    A voxel is marked when a triangle crosses the axis-aligned segment of one
    pitch through its centre, which makes the marked set 6-separating: no
    face-connected path gets from one side of a closed surface to the other
    without touching it.  Returns ``(surface, inside)``.
    """
    tris = grid.index_of(np.asarray(points, dtype=float)[np.asarray(triangles)])
    if normals is None:
        normals = _face_normals(np.asarray(points, dtype=float), np.asarray(triangles))
    return rasterize_crossings(tris, normals, grid.shape)


def voxelize_shape(boundary, grid):
    """Binary mask of the solid bounded by the (outward-oriented) triangles.

    Interior voxels come from filling the rasterised surface from the grid
    border; surface voxels are kept when their centre lies on the inner side
    of the nearest face, so the mask samples the solid at voxel centres.
    Surfaces that do not seal get one 3x3x3 morphological closing; if they
    still enclose nothing :class:`OpenSurface` is raised.
    """
    surf, inside = rasterize_triangles(boundary.points, boundary.triangles, grid,
                                       boundary.normals)
    filled = ndimage.binary_fill_holes(surf)
    interior = filled & ~surf
    if not interior.any():
        closed = ndimage.binary_closing(surf, structure=np.ones((3, 3, 3), bool),
                                        border_value=0) | surf
        interior = ndimage.binary_fill_holes(closed) & ~surf
        if not interior.any():
            raise OpenSurface("surface does not enclose any voxel; exterior fill leaks inside")
        log.warning("voxelize_shape: surface was not watertight, sealed by closing")
    return interior | (surf & inside)


def _data(x):
    return x.data if isinstance(x, Volume) else np.asarray(x)


def filled_oral_mask(oral_surface):
    """Interior of the scanned tooth surfaces, surfaces included."""
    return ndimage.binary_fill_holes(np.asarray(oral_surface, dtype=bool))


def build_weight_region(oral_surface, alpha_mask):
    """Suppression region: alpha-shape mask minus the filled oral-scan teeth."""
    oral = np.asarray(_data(oral_surface), dtype=bool)
    am = np.asarray(_data(alpha_mask), dtype=bool)
    if oral.shape != am.shape:
        raise GridMismatch(f"oral mask {oral.shape} vs alpha mask {am.shape}")
    return am & ~filled_oral_mask(oral)


def weighted_threshold(volume, region, tau):
    """1 where ``volume >= tau`` outside ``region``, 0 elsewhere."""
    data = _data(volume)
    reg = np.asarray(_data(region), dtype=bool)
    if data.shape != reg.shape:
        raise GridMismatch(f"volume {data.shape} vs region {reg.shape}")
    return (data >= tau) & ~reg
