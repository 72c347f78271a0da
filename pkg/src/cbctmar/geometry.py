"""Circular cone-beam acquisition geometry and voxel grids.

Conventions
-----------
The detector lives on the *virtual* plane through the isocenter, so every
detector coordinate is in mm at isocenter scale.  For a view angle ``beta``

    theta      = (cos beta, sin beta)       lateral detector axis u
    theta_perp = (-sin beta, cos beta)      central-ray direction

the source sits at ``-R * theta_perp`` (z = 0) and a point ``(x, z)`` maps to

    U = R + x . theta_perp
    u = R (x . theta) / U
    v = z R / U
"""
from dataclasses import dataclass, field
import hashlib
import math

import numpy as np

from .errors import SingularProjection

EPS_GEOM = 1e-6


def angle_direction(beta):
    """Return ``(theta, theta_perp)`` for view angle ``beta`` (radians)."""
    c, s = math.cos(beta), math.sin(beta)
    return np.array([c, s]), np.array([-s, c])


@dataclass(frozen=True)
class ScanGeometry:
    """Cone-beam scan on a circular orbit with a (possibly offset) flat panel.

    Pixel pitches are measured on the virtual detector through the isocenter;
    physical panel pitches must be divided by the magnification beforehand.
    """

    source_to_isocenter: float
    angles: tuple
    detector_cols: int
    detector_rows: int
    pixel_pitch_u: float
    pixel_pitch_v: float
    detector_offset_u: float = 0.0

    def __post_init__(self):
        angles = tuple(float(a) for a in np.asarray(self.angles, dtype=float).ravel())
        object.__setattr__(self, "angles", angles)
        if not self.source_to_isocenter > 0:
            raise ValueError("source_to_isocenter must be positive")
        if len(angles) == 0:
            raise ValueError("at least one view angle is required")
        a = np.asarray(angles)
        if np.any(a < 0) or np.any(a >= 2 * math.pi):
            raise ValueError("angles must lie in [0, 2*pi)")
        if np.any(np.diff(a) <= 0):
            raise ValueError("angles must be strictly increasing")
        if self.detector_cols < 1 or self.detector_rows < 1:
            raise ValueError("detector needs at least one row and column")
        if not (self.pixel_pitch_u > 0 and self.pixel_pitch_v > 0):
            raise ValueError("pixel pitches must be positive")

    @classmethod
    def circular(cls, n_angles, source_to_isocenter, detector_cols, detector_rows,
                 pixel_pitch_u, pixel_pitch_v=None, detector_offset_u=0.0, start=0.0):
        """Uniformly spaced views over a full turn."""
        angles = (start + 2 * math.pi * np.arange(n_angles) / n_angles) % (2 * math.pi)
        angles = np.sort(angles)
        return cls(source_to_isocenter, tuple(angles), int(detector_cols), int(detector_rows),
                   float(pixel_pitch_u), float(pixel_pitch_v or pixel_pitch_u),
                   float(detector_offset_u))

    @property
    def n_angles(self):
        return len(self.angles)

    @property
    def shape(self):
        return (self.n_angles, self.detector_rows, self.detector_cols)

    def angle_array(self):
        return np.asarray(self.angles)

    def u_coords(self):
        j = np.arange(self.detector_cols)
        return self.detector_offset_u + (j - (self.detector_cols - 1) / 2) * self.pixel_pitch_u

    def v_coords(self):
        i = np.arange(self.detector_rows)
        return (i - (self.detector_rows - 1) / 2) * self.pixel_pitch_v

    @property
    def u_range(self):
        u = self.u_coords()
        return float(u[0]), float(u[-1])

    def overlap_halfwidth(self):
        """Half-width of the band measured on both sides of the central ray."""
        lo, hi = self.u_range
        return min(-lo, hi) + 0.5 * self.pixel_pitch_u

    def delta_beta(self):
        """Per-view angular weights summing to 2*pi (trapezoid on the circle)."""
        a = self.angle_array()
        n = len(a)
        if n == 1:
            return np.array([2 * math.pi])
        nxt = np.roll(a, -1)
        nxt[-1] += 2 * math.pi
        prv = np.roll(a, 1)
        prv[0] -= 2 * math.pi
        return (nxt - prv) / 2

    def source_position(self, beta):
        _, perp = angle_direction(beta)
        return np.array([-self.source_to_isocenter * perp[0],
                         -self.source_to_isocenter * perp[1], 0.0])

    def detector_point(self, beta, u, v):
        theta, _ = angle_direction(beta)
        return np.array([u * theta[0], u * theta[1], v])

    def with_angles(self, angles):
        return ScanGeometry(self.source_to_isocenter, tuple(angles), self.detector_cols,
                            self.detector_rows, self.pixel_pitch_u, self.pixel_pitch_v,
                            self.detector_offset_u)

    def with_detector(self, cols=None, rows=None, offset_u=None):
        return ScanGeometry(self.source_to_isocenter, self.angles,
                            self.detector_cols if cols is None else int(cols),
                            self.detector_rows if rows is None else int(rows),
                            self.pixel_pitch_u, self.pixel_pitch_v,
                            self.detector_offset_u if offset_u is None else float(offset_u))

    def full_panel(self):
        """Smallest centred panel on the same pixel lattice covering this window."""
        lo, hi = self.u_range
        a = self.detector_offset_u / self.pixel_pitch_u
        # pixel centres coincide iff a + (M - n)/2 is an integer
        if abs(a - round(a)) < 1e-9:
            parity = self.detector_cols % 2
        elif abs(a - math.floor(a) - 0.5) < 1e-9:
            parity = (self.detector_cols + 1) % 2
        else:
            raise ValueError("offset is not a multiple of half a pixel; no aligned full panel")
        need = max(-lo, hi) / self.pixel_pitch_u
        cols = int(math.ceil(2 * need + 1 - 1e-9))
        if cols % 2 != parity:
            cols += 1
        return self.with_detector(cols=cols, offset_u=0.0)

    def canonical(self):
        parts = [
            f"R={self.source_to_isocenter!r}",
            f"cols={self.detector_cols}",
            f"rows={self.detector_rows}",
            f"du={self.pixel_pitch_u!r}",
            f"dv={self.pixel_pitch_v!r}",
            f"offset={self.detector_offset_u!r}",
            "angles=" + ",".join(repr(a) for a in self.angles),
        ]
        return ";".join(parts)

    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


@dataclass(frozen=True)
class VoxelGrid:
    """Regular isotropic grid; arrays are indexed ``[ix, iy, iz]``."""

    nx: int
    ny: int
    nz: int
    pitch: float
    origin: tuple = field(default=(0.0, 0.0, 0.0))

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValueError("grid counts must be >= 1")
        if not self.pitch > 0:
            raise ValueError("grid pitch must be positive")
        if len(self.origin) != 3:
            raise ValueError("origin must be a 3-vector")

    @classmethod
    def cube(cls, n, pitch, origin=(0.0, 0.0, 0.0)):
        return cls(n, n, n, pitch, origin)

    @property
    def shape(self):
        return (self.nx, self.ny, self.nz)

    @property
    def extent(self):
        return (self.nx * self.pitch, self.ny * self.pitch, self.nz * self.pitch)

    def axis_coords(self, axis):
        n = self.shape[axis]
        return self.origin[axis] + (np.arange(n) - (n - 1) / 2) * self.pitch

    def lower_corner(self):
        return np.array([self.origin[a] - self.shape[a] * self.pitch / 2 for a in range(3)])

    def upper_corner(self):
        return np.array([self.origin[a] + self.shape[a] * self.pitch / 2 for a in range(3)])

    def contains(self, point):
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.lower_corner()) and np.all(p <= self.upper_corner()))

    def voxel_centers(self, index):
        """Physical coordinates of integer voxel indices, shape (..., 3)."""
        idx = np.asarray(index, dtype=float)
        n = np.array(self.shape, dtype=float)
        return np.asarray(self.origin) + (idx - (n - 1) / 2) * self.pitch

    def index_of(self, points):
        """Continuous voxel index of physical points."""
        p = np.asarray(points, dtype=float)
        n = np.array(self.shape, dtype=float)
        return (p - np.asarray(self.origin)) / self.pitch + (n - 1) / 2

    def mesh(self):
        return np.meshgrid(self.axis_coords(0), self.axis_coords(1), self.axis_coords(2),
                           indexing="ij")

    def canonical(self):
        return f"n={self.nx},{self.ny},{self.nz};pitch={self.pitch!r};origin={self.origin!r}"


def detector_coords(geom, beta, point):
    """Map a 3D point to ``(u, v, U)`` on the virtual detector for view ``beta``."""
    x1, x2, z = (float(c) for c in point)
    theta, perp = angle_direction(beta)
    big_u = geom.source_to_isocenter + x1 * perp[0] + x2 * perp[1]
    if abs(big_u) < EPS_GEOM:
        raise SingularProjection(f"point {tuple(point)} lies in the source plane for beta={beta}")
    r = geom.source_to_isocenter
    u = r * (x1 * theta[0] + x2 * theta[1]) / big_u
    v = z * r / big_u
    return u, v, big_u


@dataclass
class Volume:
    """Scalar field (attenuation in 1/mm unless stated otherwise) on a grid."""

    data: np.ndarray
    grid: VoxelGrid

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.shape != self.grid.shape:
            raise ValueError(f"data shape {self.data.shape} does not match grid {self.grid.shape}")

    @classmethod
    def zeros(cls, grid, dtype=np.float64):
        return cls(np.zeros(grid.shape, dtype=dtype), grid)

    def copy(self):
        return Volume(self.data.copy(), self.grid)

    def like(self, data):
        return Volume(data, self.grid)
