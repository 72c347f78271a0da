"""Image quality metrics: NMSE, PSNR, SSIM and Dice."""
import math

import numpy as np
from scipy import ndimage

from .errors import GridMismatch, ZeroReference
from .geometry import Volume

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _arrays(x, ref):
    a = x.data if isinstance(x, Volume) else np.asarray(x)
    b = ref.data if isinstance(ref, Volume) else np.asarray(ref)
    if a.shape != b.shape:
        raise GridMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def nmse(x, ref):
    """``||x - ref||^2 / ||ref||^2``."""
    a, b = _arrays(x, ref)
    den = float(np.sum(b * b))
    if den == 0:
        raise ZeroReference("reference has zero norm")
    return float(np.sum((a - b) ** 2)) / den


def mse(x, ref):
    a, b = _arrays(x, ref)
    return float(np.mean((a - b) ** 2))


def psnr(x, ref, peak):
    """``10 log10(peak^2 / MSE)`` in dB; ``inf`` for identical inputs."""
    m = mse(x, ref)
    if m == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / m)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    k = np.arange(size) - (size - 1) / 2
    g = np.exp(-k * k / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    h = len(g) // 2
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    return out[h:img.shape[0] - h, h:img.shape[1] - h]


def ssim_map(x, ref, data_range, window=SSIM_WINDOW, sigma=SSIM_SIGMA, k1=SSIM_K1, k2=SSIM_K2):
    """Local SSIM for every fully contained Gaussian window of a 2-D slice."""
    a, b = _arrays(x, ref)
    if a.ndim != 2:
        raise ValueError("ssim_map expects 2-D slices")
    if min(a.shape) < window:
        raise ValueError(f"slice {a.shape} is smaller than the {window}-pixel window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * sab + c2)
            / ((mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)))


def ssim(x, ref, data_range, **params):
    """Mean local SSIM of two 2-D slices over valid windows."""
    return float(np.mean(ssim_map(x, ref, data_range, **params)))


def ssim_volume(x, ref, data_range, **params):
    """SSIM averaged over axial (constant z) slices."""
    a, b = _arrays(x, ref)
    if a.ndim == 2:
        return ssim(a, b, data_range, **params)
    return float(np.mean([ssim(a[:, :, k], b[:, :, k], data_range, **params)
                          for k in range(a.shape[2])]))


def dice(a, b):
    """``2|a & b| / (|a| + |b|)``; two empty masks score 1."""
    a = np.asarray(a.data if isinstance(a, Volume) else a, dtype=bool)
    b = np.asarray(b.data if isinstance(b, Volume) else b, dtype=bool)
    if a.shape != b.shape:
        raise GridMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.sum(a & b)) / total
