"""Weighted FDK reconstruction for offset, laterally truncated cone-beam scans.

Processing order per view: edge/zero padding -> redundancy weight ->
cosine weight -> ramp filter -> voxel-driven backprojection with the
``(R/U)^2`` distance weight.
"""
import math

import numpy as np

from .errors import GeometryMismatch
from .geometry import Volume
from .kernels import backproject_views
from .projector import Sinogram

TRUNCATION_THRESHOLD = 1e-6


def truncated_sides(sino, threshold=TRUNCATION_THRESHOLD):
    """``(left, right)`` flags: does any row end in a non-negligible value?"""
    v = np.abs(sino.values)
    scale = max(float(v.max()), 1.0)
    return (bool(v[..., 0].max() > threshold * scale),
            bool(v[..., -1].max() > threshold * scale))


def pad_truncation(sino, pad_cols, sides=None):
    """Widen every row by ``pad_cols`` samples on both ends.

    Truncated ends (``sides = (left, right)``, detected with
    :func:`truncated_sides` by default) replicate their edge sample; the
    other ends are zero-filled, which is exact when the object projection
    has already fallen to zero.  The returned sinogram carries the widened,
    still centred-on-the-same-offset detector geometry.
    """
    if pad_cols < 0:
        raise ValueError("pad_cols must be >= 0")
    if pad_cols == 0:
        return sino
    left, right = truncated_sides(sino) if sides is None else sides
    values = sino.values
    widths = ((0, 0), (0, 0))
    values = np.pad(values, widths + ((pad_cols if left else 0, pad_cols if right else 0),),
                    mode="edge")
    values = np.pad(values, widths + ((0 if left else pad_cols, 0 if right else pad_cols),))
    g = sino.geometry
    geom = g.with_detector(cols=g.detector_cols + 2 * pad_cols)
    return Sinogram(values, geom, sino.kind)


def offset_weight(u, overlap_halfwidth):
    """Redundancy weight for an offset detector extending to ``u > 0``.

    ``sin^2`` ramp over ``[-d, d]``; 0 below, 1 above.  ``w(u) + w(-u) == 1``
    holds exactly in floating point: negative arguments are evaluated as
    ``1 - w(-u)`` with ``w(-u) >= 0.5``, which is an exact subtraction.
    """
    d = float(overlap_halfwidth)
    if not d > 0:
        raise ValueError("overlap_halfwidth must be positive")
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    upper = np.sin(math.pi * (np.minimum(a, d) + d) / (4 * d)) ** 2
    upper = np.where(a >= d, 1.0, np.maximum(upper, 0.5))
    w = np.where(u > 0, upper, 1.0 - upper)
    w = np.where(u == 0, 0.5, w)
    return w if w.ndim else float(w)


def ramp_kernel(n, pitch_u):
    """Band-limited ramp ``h[k]`` for ``k = -(n-1) .. n-1``."""
    k = np.arange(-(n - 1), n)
    h = np.zeros(len(k))
    h[k == 0] = 1.0 / (4 * pitch_u ** 2)
    odd = (k % 2) == 1
    h[odd] = -1.0 / (math.pi * k[odd] * pitch_u) ** 2
    return k, h


def ramp_filter(row, pitch_u, hann=False):
    """Linear convolution of ``row`` (last axis) with the ramp kernel.

    Computed by zero-padded FFT of length >= 2N, so it equals the direct sum
    ``out[i] = sum_k h[i - k] row[k]``.  The result is not multiplied by the
    sample spacing.
    """
    row = np.asarray(row, dtype=float)
    n = row.shape[-1]
    if n < 2:
        raise ValueError("ramp filter needs at least two samples")
    size = 1 << int(math.ceil(math.log2(2 * n)))
    k, h = ramp_kernel(n, pitch_u)
    kern = np.zeros(size)
    kern[k % size] = h
    spec = np.fft.rfft(kern)
    if hann:
        f = np.arange(len(spec)) / (size / 2)
        spec = spec * 0.5 * (1 + np.cos(math.pi * f))
    out = np.fft.irfft(np.fft.rfft(row, n=size, axis=-1) * spec, n=size, axis=-1)
    return out[..., :n]


def redundancy_weights(geom, u, weighting, overlap_halfwidth=None):
    if weighting == "full":
        return np.full(u.shape, 0.5)
    d = overlap_halfwidth if overlap_halfwidth is not None else geom.overlap_halfwidth()
    sign = -1.0 if geom.detector_offset_u < 0 else 1.0
    return offset_weight(sign * u, d)


def filter_sinogram(sino, pad_cols=None, weighting="auto", overlap_halfwidth=None,
                    hann=False, sides=None):
    """Pad, weight and ramp-filter every row.

    Returns ``(filtered, padded_geometry)``.  The filtered rows keep the
    padded columns: the filter response of a weighted, half-covered row
    extends beyond the physical detector edge and is needed by voxels that
    project there.
    """
    geom = sino.geometry
    if weighting == "auto":
        weighting = "offset" if abs(geom.detector_offset_u) > 1e-9 * geom.pixel_pitch_u else "full"
    if weighting not in ("offset", "full"):
        raise ValueError(f"unknown weighting {weighting!r}")
    if pad_cols is None:
        pad_cols = geom.detector_cols // 2
    padded = pad_truncation(sino, pad_cols, sides)
    pg = padded.geometry
    u = pg.u_coords()
    v = pg.v_coords()
    r = geom.source_to_isocenter
    w = redundancy_weights(geom, u, weighting, overlap_halfwidth)
    cosine = r / np.sqrt(r * r + u[None, :] ** 2 + v[:, None] ** 2)
    weighted = padded.values * (w[None, :] * cosine)[None]
    return ramp_filter(weighted, pg.pixel_pitch_u, hann=hann) * pg.pixel_pitch_u, pg


def fdk_reconstruct(sino, geom, grid, pad_cols=None, weighting="auto",
                    overlap_halfwidth=None, hann=False, scale=1.0):
    """Reconstruct attenuation on ``grid`` from a post-log cone-beam sinogram.

    ``weighting="offset"`` applies the ``sin^2`` redundancy weight (default
    when the detector is offset); ``"full"`` uses the symmetric 1/2 weight of
    a standard full-scan FDK.  No extra calibration is needed: with the ramp
    kernel scaled by the column pitch the output is in the sinogram's
    attenuation units.
    """
    if sino.geometry.hash() != geom.hash():
        raise GeometryMismatch("sinogram was acquired with a different geometry")
    filtered, pg = filter_sinogram(sino, pad_cols, weighting, overlap_halfwidth, hann)
    data = backproject_views(filtered, geom.angle_array(), geom.delta_beta() * scale,
                             geom.source_to_isocenter, pg.u_coords()[0], geom.pixel_pitch_u,
                             pg.v_coords()[0], geom.pixel_pitch_v, grid.axis_coords(0),
                             grid.axis_coords(1), grid.axis_coords(2))
    return Volume(data, grid)
