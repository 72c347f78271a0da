"""Cone-beam ray transform and the polychromatic, noisy, cropped acquisition model.

A measured sinogram is simulated as

    P = crop( -ln sum_E eta(E) exp(-Ray[mu_E]) + noise )

with ``Ray`` the exact (Siddon-type) line integral from the source to each
virtual detector pixel, continued through the whole object.
"""
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .errors import WindowOutOfRange
from .geometry import ScanGeometry
from .kernels import trace_rays

VIEW_CHUNK = 8


@dataclass
class Sinogram:
    """Post-log projections, ``values[view, row, col]``."""

    values: np.ndarray
    geometry: ScanGeometry
    kind: str = "mono"
    starved: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.geometry.shape:
            raise ValueError(f"sinogram shape {self.values.shape} does not match "
                             f"geometry {self.geometry.shape}")

    def with_values(self, values, **changes):
        return replace(self, values=values, **changes)

    def copy(self):
        return replace(self, values=self.values.copy(),
                       starved=None if self.starved is None else self.starved.copy())


def saturation_value(incident_photons):
    """Post-log value assigned to photon-starved pixels (count floor of one)."""
    return float(np.log(incident_photons))


def ray_integral(volume, source, detector_point):
    """Exact integral of ``volume`` along the segment ``source -> detector_point``."""
    g = volume.grid
    return float(trace_rays(volume.data, g.lower_corner(), g.pitch,
                            np.asarray(source, dtype=float)[None],
                            np.asarray(detector_point, dtype=float)[None])[0])


def view_rays(geom, view_indices):
    """Start and end points for every ray of the given views.

    Rays run from the source through the virtual detector pixel and continue
    the same distance again, so they traverse anything within ``R`` of the
    isocenter.
    """
    betas = geom.angle_array()[view_indices]
    u = geom.u_coords()
    v = geom.v_coords()
    r = geom.source_to_isocenter
    c, s = np.cos(betas), np.sin(betas)
    src = np.stack([r * s, -r * c, np.zeros_like(betas)], axis=-1)
    det = np.empty((len(betas), len(v), len(u), 3))
    det[..., 0] = c[:, None, None] * u[None, None, :]
    det[..., 1] = s[:, None, None] * u[None, None, :]
    det[..., 2] = v[None, :, None]
    start = np.broadcast_to(src[:, None, None, :], det.shape)
    end = 2 * det - start
    return start.reshape(-1, 3), end.reshape(-1, 3)


def _project_field(data, grid, geom):
    out = np.empty(geom.shape)
    lower = grid.lower_corner()
    for b0 in range(0, geom.n_angles, VIEW_CHUNK):
        views = np.arange(b0, min(b0 + VIEW_CHUNK, geom.n_angles))
        start, end = view_rays(geom, views)
        out[views] = trace_rays(data, lower, grid.pitch, start, end).reshape(
            len(views), geom.detector_rows, geom.detector_cols)
    return out


def forward_project_mono(volume, geom):
    """Line integrals of a single attenuation volume for every detector pixel."""
    return Sinogram(_project_field(volume.data, volume.grid, geom), geom, "mono")


def forward_project_poly(materials, spectrum, geom):
    """Polychromatic post-log sinogram ``-ln sum_E eta(E) exp(-m_E)``.

    ``materials`` is either an object with ``components()`` yielding
    ``(mu_of_energy, Volume)`` pairs whose weighted sum is the attenuation at
    each energy (path lengths are then projected once per component), or a
    plain callable ``energy -> Volume`` projected once per energy bin.
    """
    spectrum.check_normalized()
    energies, weights = spectrum.nonzero()
    log_w = np.log(weights)
    if hasattr(materials, "components"):
        comps = list(materials.components())
        if not comps:
            return Sinogram(np.zeros(geom.shape), geom, "poly")
        lengths = np.stack([_project_field(vol.data, vol.grid, geom) for _, vol in comps], axis=-1)
        mu = np.stack([np.asarray(f(energies), dtype=float) for f, _ in comps])  # (K, nE)
        out = np.empty(geom.shape)
        for b in range(geom.n_angles):
            m = lengths[b] @ mu
            out[b] = -logsumexp(log_w - m, axis=-1)
        return Sinogram(out, geom, "poly")
    acc = None
    for e, lw in zip(energies, log_w):
        vol = materials(e)
        m = _project_field(vol.data, vol.grid, geom)
        term = lw - m
        acc = term if acc is None else np.logaddexp(acc, term)
    return Sinogram(-acc, geom, "poly")


def apply_noise(sino, incident_photons, gaussian_sigma, seed):
    """Poisson counting noise plus additive Gaussian noise on the post-log data.

    Pixels that record zero photons are flagged in ``starved`` and carry
    :func:`saturation_value` exactly.
    """
    if not incident_photons > 0:
        raise ValueError("incident photon count must be positive")
    rng = np.random.default_rng(seed)
    lam = incident_photons * np.exp(-sino.values)
    counts = rng.poisson(lam)
    starved = counts == 0
    p = -np.log(np.maximum(counts, 1) / incident_photons)
    if gaussian_sigma > 0:
        p = p + rng.normal(0.0, gaussian_sigma, size=p.shape)
    p[starved] = saturation_value(incident_photons)
    return Sinogram(p, sino.geometry, "noisy", starved)


def _window_offset(src_coords, dst_coords, pitch, what):
    k = (dst_coords[0] - src_coords[0]) / pitch
    k_int = int(round(k))
    if abs(k - k_int) > 1e-6:
        raise WindowOutOfRange(f"{what} window is not aligned with the source pixel lattice")
    if k_int < 0 or k_int + len(dst_coords) > len(src_coords):
        raise WindowOutOfRange(f"{what} window extends beyond the source detector")
    return k_int


def subsample(sino, geom):
    """Crop ``sino`` to the (smaller, possibly offset) detector window of ``geom``."""
    src = sino.geometry
    same = (np.isclose(src.source_to_isocenter, geom.source_to_isocenter)
            and src.n_angles == geom.n_angles
            and np.allclose(src.angle_array(), geom.angle_array())
            and np.isclose(src.pixel_pitch_u, geom.pixel_pitch_u)
            and np.isclose(src.pixel_pitch_v, geom.pixel_pitch_v))
    if not same:
        raise WindowOutOfRange("target geometry differs from the source beyond its detector window")
    c0 = _window_offset(src.u_coords(), geom.u_coords(), src.pixel_pitch_u, "column")
    r0 = _window_offset(src.v_coords(), geom.v_coords(), src.pixel_pitch_v, "row")
    cols = slice(c0, c0 + geom.detector_cols)
    rows = slice(r0, r0 + geom.detector_rows)
    starved = None if sino.starved is None else sino.starved[:, rows, cols].copy()
    return Sinogram(sino.values[:, rows, cols].copy(), geom, sino.kind, starved)
