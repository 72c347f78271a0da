"""Dental label volumes, metal insert synthesis, simulated intra-oral scans.

Label convention (universal tooth numbering):

==========  =======================================
0           background (air)
1 .. 32     individual teeth; 1-16 maxillary, 17-32 mandibular
40          soft tissue
41          bone
42          metal (only for externally segmented data)
==========  =======================================
"""
from dataclasses import dataclass
import csv
from importlib import resources
import math
import warnings

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from ..errors import (DegenerateAxis, EmptyDentition, GridMismatch, ToothNotFound,
                      ToothTooSmall, UnmappedLabel)
from ..geometry import Volume, VoxelGrid
from .materials import METALS

BACKGROUND = 0
TOOTH_IDS = tuple(range(1, 33))
SOFT_TISSUE = 40
BONE = 41
METAL = 42
VALID_LABELS = frozenset((BACKGROUND, *TOOTH_IDS, SOFT_TISSUE, BONE, METAL))

THICKNESS_RANGE = (0.6, 1.4)
SCREW_RADIUS_RANGE = (1.0, 2.5)
MIN_TOOTH_VOXELS = 27

# 6-connected cross used for the oral-scan erosion
CROSS = ndimage.generate_binary_structure(3, 1)


@dataclass
class LabelVolume:
    labels: np.ndarray
    grid: VoxelGrid

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int16)
        if self.labels.shape != self.grid.shape:
            raise GridMismatch(f"labels {self.labels.shape} vs grid {self.grid.shape}")
        bad = set(np.unique(self.labels).tolist()) - VALID_LABELS
        if bad:
            raise ValueError(f"undocumented label ids {sorted(bad)}")

    def tooth_ids(self):
        present = np.unique(self.labels)
        return [int(t) for t in present if 1 <= t <= 32]

    def tooth(self, tooth_id):
        return self.labels == tooth_id

    def teeth(self):
        return (self.labels >= 1) & (self.labels <= 32)


@dataclass(frozen=True)
class InsertSpec:
    """One metal insert: a crown shell or an implant screw."""

    kind: str
    tooth_id: int
    material: str
    thickness: float = None
    screw_radius: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("crown", "implant"):
            raise ValueError(f"unknown insert kind {self.kind!r}")
        if self.tooth_id not in TOOTH_IDS:
            raise ValueError(f"tooth id {self.tooth_id} outside 1..32")
        if self.material not in METALS:
            raise ValueError(f"{self.material!r} is not one of the insert metals {METALS}")
        if self.kind == "crown":
            lo, hi = THICKNESS_RANGE
            if self.thickness is None or not lo <= self.thickness <= hi:
                raise ValueError(f"crown thickness must lie in [{lo}, {hi}] mm")
        else:
            lo, hi = SCREW_RADIUS_RANGE
            if not lo <= self.screw_radius <= hi:
                raise ValueError(f"screw radius must lie in [{lo}, {hi}] mm")


@dataclass
class Insert:
    spec: InsertSpec
    mask: np.ndarray


def load_crown_heights(fh=None):
    """Crown height in mm per tooth id (packaged table unless ``fh`` is given)."""
    def parse(lines):
        out = {}
        for row in csv.reader(l for l in lines if l.strip() and not l.lstrip().startswith("#")):
            out[int(row[0])] = float(row[1])
        return out
    if fh is not None:
        return parse(fh)
    with resources.files("cbctmar.data").joinpath("crown_heights.csv").open() as f:
        return parse(f)


def crown_direction(tooth_id):
    """+1 if the crown points to +z (mandibular), -1 for maxillary teeth."""
    return 1 if tooth_id >= 17 else -1


def _tooth_mask(labels, tooth_id):
    mask = labels.tooth(tooth_id)
    n = int(mask.sum())
    if n == 0:
        raise ToothNotFound(f"tooth {tooth_id} is not present in the label volume")
    if n < MIN_TOOTH_VOXELS:
        raise ToothTooSmall(f"tooth {tooth_id} has only {n} voxels")
    return mask


def crown_slices(mask, tooth_id, pitch, heights=None):
    """z indices of the crown portion, ordered from cervical to occlusal.

    The crown is the ``round(h / pitch)`` slices nearest the occlusal
    extreme of the tooth; everything else counts as root.
    """
    heights = load_crown_heights() if heights is None else heights
    zs = np.flatnonzero(mask.any(axis=(0, 1)))
    n = max(1, min(len(zs), int(round(heights[tooth_id] / pitch))))
    if crown_direction(tooth_id) > 0:
        return zs[-n:]
    return zs[:n][::-1]


def make_crown_mask(labels, spec, heights=None):
    """Metal shell of ``spec.thickness`` over the crown's outer surface.

    Voxels of the crown slab whose distance to the outside of the tooth is at
    most the thickness (surface voxels count as one pitch deep).
    """
    if spec.kind != "crown":
        raise ValueError("make_crown_mask needs a crown insert spec")
    tooth = _tooth_mask(labels, spec.tooth_id)
    pitch = labels.grid.pitch
    zs = crown_slices(tooth, spec.tooth_id, pitch, heights)
    crown = np.zeros_like(tooth)
    crown[:, :, zs] = tooth[:, :, zs]
    depth = ndimage.distance_transform_edt(np.pad(tooth, 1), sampling=pitch)[1:-1, 1:-1, 1:-1]
    return crown & (depth <= spec.thickness + 1e-6 * pitch)


def implant_axis(labels, tooth_id, heights=None):
    """Axis line through the tooth centres of the cervical and median crown slices.

    Returns a function mapping a z index to the physical (x, y) disc centre.
    """
    tooth = _tooth_mask(labels, tooth_id)
    grid = labels.grid
    zs = crown_slices(tooth, tooth_id, grid.pitch, heights)
    z_low = int(zs[0])
    z_mid = int(np.sort(zs)[(len(zs) - 1) // 2])
    xs, ys = grid.axis_coords(0), grid.axis_coords(1)

    def centre(z):
        ii, jj = np.nonzero(tooth[:, :, z])
        return np.array([xs[ii].mean(), ys[jj].mean()])

    c_low = centre(z_low)
    if z_mid == z_low:
        warnings.warn(f"tooth {tooth_id}: axis points coincide, using a vertical axis",
                      DegenerateAxis)
        return lambda z: c_low
    c_mid = centre(z_mid)
    slope = (c_mid - c_low) / (z_mid - z_low)
    return lambda z: c_low + (z - z_low) * slope


def make_implant_mask(labels, spec, heights=None):
    """Stack of axial discs of radius ``spec.screw_radius`` along the implant axis.

    Discs fill every slice the tooth occupies and are clipped to the tooth
    dilated by one voxel.
    """
    if spec.kind != "implant":
        raise ValueError("make_implant_mask needs an implant insert spec")
    tooth = _tooth_mask(labels, spec.tooth_id)
    axis = implant_axis(labels, spec.tooth_id, heights)
    grid = labels.grid
    gx, gy = np.meshgrid(grid.axis_coords(0), grid.axis_coords(1), indexing="ij")
    allowed = ndimage.binary_dilation(tooth, structure=CROSS)
    mask = np.zeros_like(tooth)
    r2 = spec.screw_radius ** 2 + 1e-9
    for z in np.flatnonzero(tooth.any(axis=(0, 1))):
        cx, cy = axis(z)
        mask[:, :, z] = ((gx - cx) ** 2 + (gy - cy) ** 2 <= r2) & allowed[:, :, z]
    return mask


def make_insert(labels, spec, heights=None):
    maker = make_crown_mask if spec.kind == "crown" else make_implant_mask
    return Insert(spec, maker(labels, spec, heights))


def crown_region(labels, heights=None):
    """Crown portions of all teeth, dilated by one voxel.

    This is the part of the dentition an optical intra-oral scanner can
    see; the dilation keeps metal crowns that sit on the tooth surface.
    """
    out = np.zeros(labels.grid.shape, dtype=bool)
    for t in labels.tooth_ids():
        mask = labels.tooth(t)
        zs = crown_slices(mask, t, labels.grid.pitch, heights)
        out[:, :, zs] |= mask[:, :, zs]
    return ndimage.binary_dilation(out, structure=CROSS)


def synthesize_oral_scan(labels, metal=None, crowns_only=False, heights=None):
    """Surface shell of teeth plus metal and the physical points of its voxels.

    Returns ``(surface_mask, points)``; points are voxel centres in mm, in
    C order of the mask.  With ``crowns_only`` the points are limited to the
    crown region (roots are hidden from a real scanner); the surface mask is
    always the full shell.
    """
    teeth = labels.teeth()
    if not teeth.any():
        raise EmptyDentition("no tooth labels in the volume")
    union = teeth.copy()
    if metal is not None:
        metal = np.asarray(metal, dtype=bool)
        if metal.shape != teeth.shape:
            raise GridMismatch(f"metal mask {metal.shape} vs labels {teeth.shape}")
        union |= metal
    inner = ndimage.binary_erosion(union, structure=CROSS, border_value=0)
    surface = union & ~inner
    visible = surface & crown_region(labels, heights) if crowns_only else surface
    points = labels.grid.voxel_centers(np.argwhere(visible))
    return surface, points


DEFAULT_MAPPING = {SOFT_TISSUE: "soft_tissue", BONE: "bone",
                   **{t: "enamel" for t in TOOTH_IDS}}


class MaterialMap:
    """Per-material occupancy masks; evaluates attenuation at any energy."""

    def __init__(self, grid, masks, table):
        self.grid = grid
        self.masks = masks
        self.table = table

    def __call__(self, energy):
        data = np.zeros(self.grid.shape)
        for name, mask in self.masks.items():
            data[mask] = float(self.table.mu(name, energy))
        return Volume(data, self.grid)

    def components(self):
        """``(mu_of_energy, occupancy Volume)`` pairs for polychromatic projection."""
        return [(self.table.curves[name], Volume(mask.astype(np.float64), self.grid))
                for name, mask in self.masks.items() if mask.any()]

    def metal_mask(self):
        out = np.zeros(self.grid.shape, dtype=bool)
        for name, mask in self.masks.items():
            if name in METALS:
                out |= mask
        return out


def assign_materials(labels, table, inserts=(), mapping=None):
    """Map labels to table materials; insert masks replace whatever was there."""
    mapping = DEFAULT_MAPPING if mapping is None else mapping
    masks = {}
    for lab in np.unique(labels.labels):
        lab = int(lab)
        if lab == BACKGROUND:
            continue
        if lab not in mapping:
            raise UnmappedLabel(f"label {lab} has no material")
        name = mapping[lab]
        if name not in table:
            raise UnmappedLabel(f"material {name!r} for label {lab} is not in the table")
        sel = labels.labels == lab
        masks[name] = masks[name] | sel if name in masks else sel
    for ins in inserts:
        if ins.spec.material not in table:
            raise UnmappedLabel(f"insert material {ins.spec.material!r} is not in the table")
        for name in masks:
            masks[name] = masks[name] & ~ins.mask
        masks[ins.spec.material] = masks.get(ins.spec.material, np.zeros_like(ins.mask)) | ins.mask
    return MaterialMap(labels.grid, masks, table)


# --------------------------------------------------------------------------
# synthetic patient
# --------------------------------------------------------------------------

# (mesiodistal width, labiolingual depth, root length) in mm
_ANTERIOR = {
    "central": (5.0, 6.0, 12.5),
    "lateral": (5.5, 6.0, 14.0),
    "canine": (7.0, 7.5, 16.0),
}
# mandibular canine to canine, left to right in x
MANDIBULAR_ARCH = ((27, "canine"), (26, "lateral"), (25, "central"),
                   (24, "central"), (23, "lateral"), (22, "canine"))


def _tooth_shape(q, width, depth, crown_h, root_l):
    """Point test in the tooth's local frame (z up from the cemento-enamel junction)."""
    a, b = width / 2, depth / 2
    z = q[..., 2]
    crown = (z >= 0) & ((q[..., 0] / a) ** 2 + (q[..., 1] / b) ** 2 + (z / crown_h) ** 4 <= 1)
    taper = 1 - 0.75 * np.clip(-z / root_l, 0, 1)
    root = (z < 0) & (z >= -root_l) & (
        (q[..., 0] / (0.8 * a * taper)) ** 2 + (q[..., 1] / (0.85 * b * taper)) ** 2 <= 1)
    return crown | root


def make_dental_phantom(grid=None, seed=0, arch_radius=16.0, cej_z=1.0, heights=None):
    """Soft tissue, alveolar bone and six mandibular anterior teeth.

    The arch lies on a circle of ``arch_radius`` mm; each tooth gets a small
    seeded tilt.  Default grid: 64^3 at 0.6 mm.
    """
    grid = VoxelGrid.cube(64, 0.6) if grid is None else grid
    heights = load_crown_heights() if heights is None else heights
    rng = np.random.default_rng(seed)
    x, y, z = grid.mesh()
    ex, ey, _ = grid.extent
    labels = np.zeros(grid.shape, dtype=np.int16)
    labels[(x / (0.46 * ex)) ** 2 + (y / (0.40 * ey)) ** 2 <= 1] = SOFT_TISSUE

    centre_y = -arch_radius / 2
    widths = [0.85 * _ANTERIOR[k][0] for _, k in MANDIBULAR_ARCH]
    total = sum(widths) / arch_radius
    phi = -total / 2 + (np.cumsum(widths) - np.asarray(widths) / 2) / arch_radius

    # bone: band around the arch below the cervical line
    rr = np.hypot(x, y - centre_y)
    ang = np.arctan2(x, y - centre_y)
    band = (np.abs(rr - arch_radius) <= 5.0) & (np.abs(ang) <= total / 2 + 0.25)
    labels[band & (z >= cej_z - 19.0) & (z <= cej_z - 1.5)] = BONE

    pts = np.stack([x, y, z], axis=-1)
    for (tid, kind), p in zip(MANDIBULAR_ARCH, phi):
        width, depth, root = _ANTERIOR[kind]
        base = np.array([arch_radius * math.sin(p), centre_y + arch_radius * math.cos(p), cej_z])
        tilt = rng.uniform(-0.08, 0.08, size=2)
        rot = Rotation.from_euler("zxy", [-p, tilt[0], tilt[1]]).as_matrix()
        q = (pts - base) @ rot
        labels[_tooth_shape(q, 0.85 * width, depth, heights[tid], root)] = tid
    return LabelVolume(labels, grid)


def random_insert_specs(labels, rng, n_range=(2, 5), thickness_range=THICKNESS_RANGE,
                        screw_radius=1.5, metals=METALS):
    """Draw 2-5 inserts on distinct teeth with random kind, metal and thickness."""
    teeth = labels.tooth_ids()
    if not teeth:
        raise EmptyDentition("no teeth to place inserts on")
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    n = min(n, len(teeth))
    chosen = rng.choice(teeth, size=n, replace=False)
    specs = []
    for tid in sorted(int(t) for t in chosen):
        kind = "crown" if rng.random() < 0.5 else "implant"
        material = str(rng.choice(metals))
        seed = int(rng.integers(2 ** 31))
        if kind == "crown":
            t = float(np.round(rng.uniform(*thickness_range), 3))
            specs.append(InsertSpec("crown", tid, material, thickness=t, seed=seed))
        else:
            specs.append(InsertSpec("implant", tid, material, screw_radius=screw_radius, seed=seed))
    return specs
