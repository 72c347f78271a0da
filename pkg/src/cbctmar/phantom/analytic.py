"""Analytic convex primitives, their voxelisation and exact line integrals."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import OutOfGrid
from ..geometry import Volume


def _frame(rotation):
    return np.eye(3) if rotation is None else np.asarray(rotation, dtype=float)


@dataclass(frozen=True)
class Primitive:
    center: tuple
    material: str
    rotation: object = field(default=None, compare=False)

    def _local(self, points):
        p = np.asarray(points, dtype=float) - np.asarray(self.center, dtype=float)
        return p @ _frame(self.rotation)

    def _local_dir(self, d):
        return np.asarray(d, dtype=float) @ _frame(self.rotation)


@dataclass(frozen=True)
class Ellipsoid(Primitive):
    semi_axes: tuple = (1.0, 1.0, 1.0)

    def contains(self, points):
        q = self._local(points) / np.asarray(self.semi_axes)
        return (q * q).sum(axis=-1) <= 1.0

    def chord(self, p0, d):
        a = np.asarray(self.semi_axes, dtype=float)
        q0 = self._local(p0) / a
        dq = self._local_dir(d) / a
        aa = dq @ dq
        bb = 2 * q0 @ dq
        cc = q0 @ q0 - 1
        disc = bb * bb - 4 * aa * cc
        if aa == 0 or disc <= 0:
            return None
        r = np.sqrt(disc)
        return (-bb - r) / (2 * aa), (-bb + r) / (2 * aa)


@dataclass(frozen=True)
class Cylinder(Primitive):
    """Finite (elliptic) cylinder along the local z axis."""

    radius: object = 1.0
    half_length: float = 1.0

    def _radii(self):
        r = np.atleast_1d(np.asarray(self.radius, dtype=float))
        return np.array([r[0], r[-1]])

    def contains(self, points):
        q = self._local(points)
        r = self._radii()
        return (((q[..., 0] / r[0]) ** 2 + (q[..., 1] / r[1]) ** 2 <= 1.0)
                & (np.abs(q[..., 2]) <= self.half_length))

    def chord(self, p0, d):
        r = self._radii()
        q0 = self._local(p0)
        dq = self._local_dir(d)
        lo, hi = -np.inf, np.inf
        a = (dq[0] / r[0]) ** 2 + (dq[1] / r[1]) ** 2
        b = 2 * (q0[0] * dq[0] / r[0] ** 2 + q0[1] * dq[1] / r[1] ** 2)
        c = (q0[0] / r[0]) ** 2 + (q0[1] / r[1]) ** 2 - 1
        if a == 0:
            if c > 0:
                return None
        else:
            disc = b * b - 4 * a * c
            if disc <= 0:
                return None
            s = np.sqrt(disc)
            lo, hi = (-b - s) / (2 * a), (-b + s) / (2 * a)
        if dq[2] == 0:
            if abs(q0[2]) > self.half_length:
                return None
        else:
            t0 = (-self.half_length - q0[2]) / dq[2]
            t1 = (self.half_length - q0[2]) / dq[2]
            lo, hi = max(lo, min(t0, t1)), min(hi, max(t0, t1))
        return (lo, hi) if hi > lo else None


@dataclass(frozen=True)
class Cuboid(Primitive):
    half_sizes: tuple = (1.0, 1.0, 1.0)

    def contains(self, points):
        q = np.abs(self._local(points))
        return np.all(q <= np.asarray(self.half_sizes), axis=-1)

    def chord(self, p0, d):
        h = np.asarray(self.half_sizes, dtype=float)
        q0 = self._local(p0)
        dq = self._local_dir(d)
        lo, hi = -np.inf, np.inf
        for a in range(3):
            if dq[a] == 0:
                if abs(q0[a]) > h[a]:
                    return None
                continue
            t0 = (-h[a] - q0[a]) / dq[a]
            t1 = (h[a] - q0[a]) / dq[a]
            lo, hi = max(lo, min(t0, t1)), min(hi, max(t0, t1))
        return (lo, hi) if hi > lo else None


class AnalyticPhantom:
    """Voxelised primitives plus the exact line-integral oracle they came from.

    ``labels`` holds 0 for vacuum and ``k + 1`` for ``materials[k]``; where
    primitives overlap the later one wins, both in the voxels and in
    :meth:`line_integral`.
    """

    def __init__(self, primitives, grid, labels, materials):
        self.primitives = list(primitives)
        self.grid = grid
        self.labels = labels
        self.materials = materials

    def volume(self, mu):
        """Attenuation volume; ``mu`` maps material name to 1/mm."""
        lut = np.zeros(len(self.materials) + 1)
        for k, name in enumerate(self.materials):
            lut[k + 1] = mu[name]
        return Volume(lut[self.labels], self.grid)

    def volume_at(self, energy, table):
        return self.volume({m: float(table.mu(m, energy)) for m in self.materials})

    def line_integral(self, start, end, mu):
        """Exact integral of the piecewise-constant field along ``start -> end``."""
        p0 = np.asarray(start, dtype=float)
        d = np.asarray(end, dtype=float) - p0
        length = np.linalg.norm(d)
        spans = []
        for prim in self.primitives:
            ch = prim.chord(p0, d)
            if ch is None:
                spans.append(None)
                continue
            lo, hi = max(ch[0], 0.0), min(ch[1], 1.0)
            spans.append((lo, hi) if hi > lo else None)
        cuts = sorted({0.0, 1.0, *[t for s in spans if s for t in s]})
        total = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            mid = 0.5 * (a + b)
            top = None
            for prim, s in zip(self.primitives, spans):
                if s and s[0] <= mid <= s[1]:
                    top = prim
            if top is not None:
                total += mu[top.material] * (b - a) * length
        return total

    def chord_length(self, index, start, end):
        """Length of ``start -> end`` inside primitive ``index`` alone."""
        p0 = np.asarray(start, dtype=float)
        d = np.asarray(end, dtype=float) - p0
        ch = self.primitives[index].chord(p0, d)
        if ch is None:
            return 0.0
        lo, hi = max(ch[0], 0.0), min(ch[1], 1.0)
        return max(hi - lo, 0.0) * np.linalg.norm(d)


def make_analytic_phantom(primitives, grid):
    """Voxelise ``primitives`` (sampled at voxel centres) on ``grid``."""
    materials = []
    for prim in primitives:
        if not grid.contains(prim.center):
            raise OutOfGrid(f"primitive centre {tuple(prim.center)} lies outside the grid")
        if prim.material not in materials:
            materials.append(prim.material)
    labels = np.zeros(grid.shape, dtype=np.int16)
    if primitives:
        pts = np.stack(grid.mesh(), axis=-1)
        for prim in primitives:
            labels[prim.contains(pts)] = materials.index(prim.material) + 1
    return AnalyticPhantom(primitives, grid, labels, materials)
