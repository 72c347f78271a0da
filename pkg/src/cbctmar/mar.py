"""Metal traces, linear-interpolation MAR and the image-enhancer interface.

An *enhancer* maps an artifact-affected volume plus the oral-scan surface
mask to a corrected volume on the same grid.  Three implementations are
shipped: identity, LI-MAR (sinogram inpainting + FDK), and an adapter that
shells out to an external executable (e.g. a trained network).
"""
import logging
import os
import subprocess
import tempfile

import numpy as np
from scipy import ndimage

from .errors import AllTraceRow, GridMismatch
from .fdk import fdk_reconstruct
from .geometry import Volume
from .projector import _project_field, forward_project_mono

log = logging.getLogger(__name__)

METAL_THRESHOLD = 0.3
MIN_COMPONENT = 8
TRACE_TOL = 1e-6


def extract_metal_mask(volume, threshold=METAL_THRESHOLD, min_size=MIN_COMPONENT):
    """Voxels with ``mu >= threshold``, dropping 26-connected blobs under ``min_size``."""
    data = volume.data if isinstance(volume, Volume) else np.asarray(volume)
    mask = data >= threshold
    if not mask.any():
        return mask
    lab, n = ndimage.label(mask, structure=np.ones((3, 3, 3), bool))
    sizes = np.bincount(lab.ravel(), minlength=n + 1)
    keep = sizes >= min_size
    keep[0] = False
    return keep[lab]


def metal_trace(metal, geom, grid=None):
    """Detector pixels whose rays cross the metal (path length above 1e-6 mm)."""
    if isinstance(metal, Volume):
        grid, data = metal.grid, metal.data
    else:
        if grid is None:
            raise ValueError("a grid is needed for a bare metal mask")
        data = np.asarray(metal)
    data = np.asarray(data, dtype=np.float64)
    if not data.any():
        return np.zeros(geom.shape, dtype=bool)
    return _project_field(data, grid, geom) > TRACE_TOL


def _runs(flags):
    """Maximal runs of True as inclusive ``(start, stop)`` pairs."""
    d = np.diff(np.concatenate([[0], flags.astype(np.int8), [0]]))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1) - 1))


def _inpaint_row(row, flags):
    """Fill trace runs of one detector row in place; False if the row is all trace.

    Interior runs interpolate linearly between their flanking samples.  A run
    touching a detector edge has only one flanking sample; the row is then
    virtually extended by mirroring the valid samples about the run's inner
    boundary (``run length + 2`` virtual samples), and the mirrored sample
    landing one pixel beyond the detector edge serves as the missing anchor.
    Mirrored indices are clamped to the valid segment next to the run, so a
    short segment reflects its far end instead of reaching into other trace
    samples.
    """
    n = len(row)
    if flags.all():
        return False
    src = row.copy()
    runs = _runs(flags)
    for k, (a, b) in enumerate(runs):
        length = b - a + 1
        if a > 0 and b < n - 1:
            xl, yl, xr, yr = a - 1, src[a - 1], b + 1, src[b + 1]
        elif b == n - 1:
            # mirror about a - 1/2: virtual index a - 1 + k holds src[a - k]
            lo = runs[k - 1][1] + 1 if k > 0 else 0
            xl, yl = a - 1, src[a - 1]
            xr, yr = n, src[max(a - 1 - length, lo)]
        else:
            hi = runs[k + 1][0] - 1 if k + 1 < len(runs) else n - 1
            xr, yr = b + 1, src[b + 1]
            xl, yl = -1, src[min(b + 1 + length, hi)]
        t = (np.arange(a, b + 1) - xl) / (xr - xl)
        row[a:b + 1] = yl + t * (yr - yl)
    return True


def li_inpaint(sino, trace):
    """Replace metal-trace samples by per-row linear interpolation.

    Rows that are entirely trace in one view are filled from neighbouring
    views (periodic in angle); a row that is all trace in every view raises
    :class:`AllTraceRow`.
    """
    trace = np.asarray(trace, dtype=bool)
    if trace.shape != sino.values.shape:
        raise GridMismatch(f"trace {trace.shape} vs sinogram {sino.values.shape}")
    out = sino.values.copy()
    if not trace.any():
        return sino.with_values(out)
    full_rows = []
    for b, r in zip(*np.nonzero(trace.any(axis=2))):
        if not _inpaint_row(out[b, r], trace[b, r]):
            full_rows.append((b, r))
    if full_rows:
        angles = sino.geometry.angle_array()
        full = np.zeros(trace.shape[:2], dtype=bool)
        for b, r in full_rows:
            full[b, r] = True
        for r in np.unique([r for _, r in full_rows]):
            ok = ~full[:, r]
            if not ok.any():
                raise AllTraceRow(f"detector row {r} is metal trace in every view")
            bad = np.flatnonzero(full[:, r])
            for c in range(trace.shape[2]):
                out[bad, r, c] = np.interp(angles[bad], angles[ok], out[ok, r, c],
                                           period=2 * np.pi)
    return sino.with_values(out)


# --------------------------------------------------------------------------
# enhancers
# --------------------------------------------------------------------------

class Enhancer:
    """Image enhancer: ``apply(volume, oral_surface_mask) -> Volume``."""

    name = "base"

    def apply(self, x, oral=None):  # pragma: no cover - interface
        raise NotImplementedError

    def __call__(self, x, oral=None):
        return apply_enhancer(self, x, oral)


class IdentityEnhancer(Enhancer):
    name = "identity"

    def apply(self, x, oral=None):
        return x.copy()


class LIMarEnhancer(Enhancer):
    """Linear-interpolation MAR.

    The metal is segmented from ``x`` by thresholding, its trace is
    inpainted in the measured sinogram (or in a reprojection of ``x`` when
    none is given), FDK reconstructs the result and the segmented metal
    voxels are copied back from ``x``.
    """

    name = "li"

    def __init__(self, geom, sinogram=None, threshold=METAL_THRESHOLD, reinsert_metal=True,
                 fdk_options=None):
        self.geom = geom
        self.sinogram = sinogram
        self.threshold = threshold
        self.reinsert_metal = reinsert_metal
        self.fdk_options = dict(fdk_options or {})

    def apply(self, x, oral=None):
        metal = extract_metal_mask(x, self.threshold)
        if not metal.any():
            log.info("LI-MAR: no metal above %.3g/mm, returning input", self.threshold)
            return x.copy()
        sino = self.sinogram if self.sinogram is not None else forward_project_mono(x, self.geom)
        trace = metal_trace(metal, self.geom, x.grid)
        fixed = li_inpaint(sino, trace)
        y = fdk_reconstruct(fixed, self.geom, x.grid, **self.fdk_options)
        if self.reinsert_metal:
            y.data[metal] = x.data[metal]
        return y


class ExternalEnhancer(Enhancer):
    """Runs ``command in.hdr oral.hdr out.hdr`` and reads the result back.

    Volumes travel in the toolkit's raw + header format, so any executable
    (for instance a trained network wrapper) can take part in the pipeline.
    """

    name = "external"

    def __init__(self, command, timeout=None):
        self.command = command if isinstance(command, (list, tuple)) else [command]
        self.timeout = timeout

    def apply(self, x, oral=None):
        from . import io
        with tempfile.TemporaryDirectory(prefix="cbctmar-ext-") as tmp:
            src = os.path.join(tmp, "in.hdr")
            oral_path = os.path.join(tmp, "oral.hdr")
            dst = os.path.join(tmp, "out.hdr")
            io.write_volume(src, x)
            oral_mask = np.zeros(x.grid.shape, bool) if oral is None else np.asarray(oral, bool)
            io.write_volume(oral_path, Volume(oral_mask.astype(np.uint8), x.grid), kind="mask")
            subprocess.run([*self.command, src, oral_path, dst], check=True, timeout=self.timeout)
            return io.read_volume(dst)


def apply_enhancer(enhancer, x, oral=None):
    if oral is not None and np.shape(oral) != x.grid.shape:
        raise GridMismatch(f"oral mask {np.shape(oral)} vs volume {x.grid.shape}")
    y = enhancer.apply(x, oral)
    if y.grid != x.grid:
        raise GridMismatch(f"enhancer {enhancer.name!r} changed the grid")
    return y


def soft_mask(mask, pitch=1.0, temperature=1.0):
    """Probabilities from a binary mask via a signed-distance sigmoid.

    Distance in voxels is positive inside; voxels on either side of the
    boundary sit at +-0.5 voxel.  ``temperature`` is in voxels.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.all() or not mask.any():
        return np.full(mask.shape, 1.0 if mask.any() else 0.0)
    inside = ndimage.distance_transform_edt(mask)
    outside = ndimage.distance_transform_edt(~mask)
    sd = np.where(mask, inside - 0.5, -(outside - 0.5))
    return 1.0 / (1.0 + np.exp(-sd / temperature))


def score_enhancer(output, reference, tooth_pred, tooth_ref, temperature=1.0, eps=1e-7):
    """``(l2, ce)``: mean squared error and voxelwise binary cross-entropy.

    The cross-entropy compares the softened prediction (see
    :func:`soft_mask`) with the binary reference tooth mask; probabilities
    are clipped to ``[eps, 1 - eps]``.
    """
    a = output.data if isinstance(output, Volume) else np.asarray(output)
    b = reference.data if isinstance(reference, Volume) else np.asarray(reference)
    pred = np.asarray(tooth_pred, dtype=bool)
    ref = np.asarray(tooth_ref, dtype=bool)
    if not (a.shape == b.shape == pred.shape == ref.shape):
        raise GridMismatch("output, reference and tooth masks must share a grid")
    l2 = float(np.mean((a.astype(np.float64) - b) ** 2))
    p = np.clip(soft_mask(pred, temperature=temperature), eps, 1 - eps)
    ce = float(-np.mean(np.where(ref, np.log(p), np.log1p(-p))))
    return l2, ce
