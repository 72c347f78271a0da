"""Reusable stage functions shared by the command line and the test suites.

Stages: generate (phantom, inserts, oral scan) -> simulate (P and P*) ->
reconstruct -> mar -> segment -> evaluate.  Every stage is a pure function
of its inputs and seeds, so reruns are bit-reproducible.
"""
from dataclasses import dataclass, field
import logging

import numpy as np

from . import alphashape, metrics
from .fdk import fdk_reconstruct
from .geometry import ScanGeometry, Volume, VoxelGrid
from .mar import IdentityEnhancer, LIMarEnhancer
from .phantom import (MaterialTable, assign_materials, make_dental_phantom,
                      make_insert, random_insert_specs, synthesize_oral_scan)
from .phantom.dental import TOOTH_IDS
from .projector import apply_noise, forward_project_mono, forward_project_poly, subsample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """Desk-scale defaults: 64^3 grid at 0.6 mm, 180 views, 96 x 64 offset detector."""

    grid_size: int = 64
    voxel_pitch: float = 0.6
    views: int = 180
    source_to_isocenter: float = 300.0
    detector_cols: int = 96
    detector_rows: int = 64
    pixel_pitch_u: float = 0.45
    pixel_pitch_v: float = 0.7
    detector_offset: float = 10.8
    incident_photons: float = 1e5
    gaussian_sigma: float = 0.01
    reference_energy: float = None     # default: spectrum mean energy
    n_inserts: tuple = (2, 5)
    thickness_range: tuple = (0.6, 1.4)
    screw_radius: float = 1.5
    metal_threshold: float = 0.3
    alpha: float = 2.5
    extension: float = 3.0
    tau: float = 0.045
    scan_jitter: float = 0.02          # fraction of the voxel pitch
    scan_crowns_only: bool = True      # oral scan sees crowns, not roots
    metals: tuple = ("Au", "Pd", "Ni", "Cr", "Zr", "Al")

    def grid(self):
        return VoxelGrid.cube(self.grid_size, self.voxel_pitch)

    def geometry(self):
        return ScanGeometry.circular(self.views, self.source_to_isocenter, self.detector_cols,
                                     self.detector_rows, self.pixel_pitch_u, self.pixel_pitch_v,
                                     self.detector_offset)


@dataclass
class Case:
    labels: object
    specs: list
    inserts: list
    clean: object          # MaterialMap without metal
    metal: object          # MaterialMap with inserts
    metal_mask: np.ndarray
    oral_surface: np.ndarray
    oral_points: np.ndarray
    seed: int = 0
    manifest: dict = field(default_factory=dict)


def generate_case(seed, config=PipelineConfig(), table=None):
    """Synthetic patient with 2-5 random metal inserts and its simulated oral scan."""
    table = MaterialTable.default() if table is None else table
    rng = np.random.default_rng(seed)
    labels = make_dental_phantom(config.grid(), seed=int(rng.integers(2 ** 31)))
    specs = random_insert_specs(labels, rng, config.n_inserts, config.thickness_range,
                                config.screw_radius, config.metals)
    inserts = [make_insert(labels, s) for s in specs]
    metal_mask = np.zeros(labels.grid.shape, dtype=bool)
    for ins in inserts:
        metal_mask |= ins.mask
    surface, points = synthesize_oral_scan(labels, metal_mask, config.scan_crowns_only)
    manifest = {
        "seed": int(seed),
        "inserts": [dict(kind=s.kind, tooth_id=s.tooth_id, material=s.material,
                         thickness=s.thickness, screw_radius=s.screw_radius, seed=s.seed,
                         voxels=int(i.mask.sum())) for s, i in zip(specs, inserts)],
        "oral_points": int(len(points)),
    }
    return Case(labels, specs, inserts, assign_materials(labels, table),
                assign_materials(labels, table, inserts), metal_mask, surface, points,
                int(seed), manifest)


def reference_energy(config, spectrum):
    return spectrum.mean_energy() if config.reference_energy is None else config.reference_energy


def simulate(metal_map, clean_map, geom, spectrum, config=PipelineConfig(), seed=0):
    """``(P, P_star)`` cropped to ``geom``.

    ``P`` is the noisy polychromatic sinogram of the patient with metal;
    ``P_star`` is the noiseless monochromatic sinogram, at the reference
    energy, of the same patient without the inserts.  Both are projected on
    the centred full panel first.
    """
    full = geom.full_panel()
    poly = forward_project_poly(metal_map, spectrum, full)
    noisy = apply_noise(poly, config.incident_photons, config.gaussian_sigma, seed)
    ideal = forward_project_mono(clean_map(reference_energy(config, spectrum)), full)
    return subsample(noisy, geom), subsample(ideal, geom)


def reconstruct(sino, geom, grid):
    return fdk_reconstruct(sino, geom, grid)


def make_enhancer(name, geom, sino=None, config=PipelineConfig()):
    if name == "identity":
        return IdentityEnhancer()
    if name == "li":
        return LIMarEnhancer(geom, sinogram=sino, threshold=config.metal_threshold)
    if name.startswith("external:"):
        from .mar import ExternalEnhancer
        return ExternalEnhancer(name.split(":", 1)[1])
    raise ValueError(f"unknown enhancer {name!r}")


def segment(volume, oral_points, oral_surface, config=PipelineConfig(), seed=0):
    """Weighted thresholding with the extended alpha shape of the oral scan.

    Returns ``(mask, region)``.  Scan points get a seeded sub-voxel jitter so
    lattice-aligned synthetic scans are in general position.
    """
    grid = volume.grid
    if oral_points is None or len(oral_points) < 4:
        region = np.zeros(grid.shape, dtype=bool)
        return alphashape.weighted_threshold(volume, region, config.tau), region
    rng = np.random.default_rng(seed)
    pts = np.asarray(oral_points, dtype=float)
    if config.scan_jitter > 0:
        pts = pts + rng.uniform(-1, 1, pts.shape) * config.scan_jitter * grid.pitch
    cloud = alphashape.PointCloud(pts)
    boundary = alphashape.alpha_shape_boundary(cloud, config.alpha)
    if len(boundary.triangles) == 0:
        log.warning("alpha %.3g mm exposes no triangle; suppression region is empty", config.alpha)
        region = np.zeros(grid.shape, dtype=bool)
        return alphashape.weighted_threshold(volume, region, config.tau), region
    _, extended = alphashape.extend_shape(boundary, cloud, config.extension)
    alpha_mask = alphashape.voxelize_shape(extended, grid)
    region = alphashape.build_weight_region(oral_surface, alpha_mask)
    return alphashape.weighted_threshold(volume, region, config.tau), region


def masked(volume, reference, exclude):
    """Copy of ``volume`` with the ``exclude`` voxels taken from ``reference``."""
    if exclude is None:
        return volume
    data = volume.data.copy()
    data[exclude] = reference.data[exclude]
    return Volume(data, volume.grid)


def evaluate(volumes, reference, exclude=None, peak=None):
    """Metric rows ``{name: (nmse, ssim, psnr)}`` against ``reference``.

    Voxels in ``exclude`` (the inserted metal) are scored as perfect so the
    metrics measure artifacts, not the metal itself.
    """
    ref = reference.data
    peak = float(np.max(ref) - np.min(ref)) if peak is None else peak
    rows = {}
    for name, vol in volumes.items():
        v = masked(vol, reference, exclude)
        rows[name] = (metrics.nmse(v, reference), metrics.ssim_volume(v, reference, peak),
                      metrics.psnr(v, reference, peak))
    return rows


def tooth_mask(labels):
    return np.isin(labels.labels, TOOTH_IDS)
