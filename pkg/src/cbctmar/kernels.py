"""Hot inner loops: exact ray traversal, voxel-driven backprojection and
triangle rasterisation.

Every kernel has a numba implementation and a pure-numpy one with the same
signature.  :func:`trace_rays`, :func:`backproject_views` and
:func:`rasterize_crossings` dispatch on :func:`cbctmar._accel.numba_enabled`.
"""
import math

import numpy as np

from ._accel import njit, numba_enabled, prange

_NUMPY_RAY_CHUNK = 4096


# --------------------------------------------------------------------------
# ray traversal
# --------------------------------------------------------------------------

@njit(cache=True, fastmath=False)
def _trace_one(data, lx, ly, lz, pitch, sx, sy, sz, ex, ey, ez):
    nx, ny, nz = data.shape
    dx = ex - sx
    dy = ey - sy
    dz = ez - sz
    length = math.sqrt(dx * dx + dy * dy + dz * dz)
    if length == 0.0:
        return 0.0
    tmin = 0.0
    tmax = 1.0
    # slab clipping against the grid box
    ux = lx + nx * pitch
    uy = ly + ny * pitch
    uz = lz + nz * pitch
    if dx != 0.0:
        t0 = (lx - sx) / dx
        t1 = (ux - sx) / dx
        tmin = max(tmin, min(t0, t1))
        tmax = min(tmax, max(t0, t1))
    elif sx < lx or sx > ux:
        return 0.0
    if dy != 0.0:
        t0 = (ly - sy) / dy
        t1 = (uy - sy) / dy
        tmin = max(tmin, min(t0, t1))
        tmax = min(tmax, max(t0, t1))
    elif sy < ly or sy > uy:
        return 0.0
    if dz != 0.0:
        t0 = (lz - sz) / dz
        t1 = (uz - sz) / dz
        tmin = max(tmin, min(t0, t1))
        tmax = min(tmax, max(t0, t1))
    elif sz < lz or sz > uz:
        return 0.0
    if tmin >= tmax:
        return 0.0

    # voxel containing the midpoint of the first step avoids boundary rounding
    tm = tmin + 1e-9 * (tmax - tmin)
    ix = int(math.floor((sx + tm * dx - lx) / pitch))
    iy = int(math.floor((sy + tm * dy - ly) / pitch))
    iz = int(math.floor((sz + tm * dz - lz) / pitch))
    ix = min(max(ix, 0), nx - 1)
    iy = min(max(iy, 0), ny - 1)
    iz = min(max(iz, 0), nz - 1)

    inf = 1e300
    if dx > 0.0:
        stx = 1
        tnx = (lx + (ix + 1) * pitch - sx) / dx
        tdx = pitch / dx
    elif dx < 0.0:
        stx = -1
        tnx = (lx + ix * pitch - sx) / dx
        tdx = -pitch / dx
    else:
        stx = 0
        tnx = inf
        tdx = inf
    if dy > 0.0:
        sty = 1
        tny = (ly + (iy + 1) * pitch - sy) / dy
        tdy = pitch / dy
    elif dy < 0.0:
        sty = -1
        tny = (ly + iy * pitch - sy) / dy
        tdy = -pitch / dy
    else:
        sty = 0
        tny = inf
        tdy = inf
    if dz > 0.0:
        stz = 1
        tnz = (lz + (iz + 1) * pitch - sz) / dz
        tdz = pitch / dz
    elif dz < 0.0:
        stz = -1
        tnz = (lz + iz * pitch - sz) / dz
        tdz = -pitch / dz
    else:
        stz = 0
        tnz = inf
        tdz = inf

    acc = 0.0
    tc = tmin
    while True:
        texit = min(tnx, tny, tnz, tmax)
        if texit > tc:
            acc += data[ix, iy, iz] * (texit - tc)
            tc = texit
        if tc >= tmax:
            break
        if tnx <= tny and tnx <= tnz:
            ix += stx
            tnx += tdx
            if ix < 0 or ix >= nx:
                break
        elif tny <= tnz:
            iy += sty
            tny += tdy
            if iy < 0 or iy >= ny:
                break
        else:
            iz += stz
            tnz += tdz
            if iz < 0 or iz >= nz:
                break
    return acc * length


@njit(cache=True, parallel=True)
def _trace_rays_numba(data, lower, pitch, starts, ends, out):
    n = starts.shape[0]
    lx, ly, lz = lower[0], lower[1], lower[2]
    for r in prange(n):
        out[r] = _trace_one(data, lx, ly, lz, pitch,
                            starts[r, 0], starts[r, 1], starts[r, 2],
                            ends[r, 0], ends[r, 1], ends[r, 2])


def _trace_rays_numpy(data, lower, pitch, starts, ends, out):
    shape = np.array(data.shape)
    upper = lower + shape * pitch
    flat = data.ravel()
    for c0 in range(0, starts.shape[0], _NUMPY_RAY_CHUNK):
        s = starts[c0:c0 + _NUMPY_RAY_CHUNK]
        d = ends[c0:c0 + _NUMPY_RAY_CHUNK] - s
        length = np.sqrt((d * d).sum(axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t_lo = (lower - s) * inv
            t_hi = (upper - s) * inv
        par = d == 0
        inside = (s >= lower) & (s <= upper)
        t_lo = np.where(par, np.where(inside, -np.inf, np.inf), t_lo)
        t_hi = np.where(par, np.where(inside, np.inf, -np.inf), t_hi)
        tmin = np.maximum(np.minimum(t_lo, t_hi).max(axis=1), 0.0)
        tmax = np.minimum(np.maximum(t_lo, t_hi).min(axis=1), 1.0)
        # every plane crossing on every axis, clipped to the ray's box interval
        ts = [tmin[:, None], tmax[:, None]]
        for a in range(3):
            planes = lower[a] + np.arange(shape[a] + 1) * pitch
            with np.errstate(divide="ignore", invalid="ignore"):
                ta = (planes[None, :] - s[:, a:a + 1]) * inv[:, a:a + 1]
            ta = np.where(par[:, a:a + 1], tmin[:, None], ta)
            ts.append(np.clip(ta, tmin[:, None], np.maximum(tmin, tmax)[:, None]))
        t = np.sort(np.concatenate(ts, axis=1), axis=1)
        seg = np.diff(t, axis=1)
        mid = 0.5 * (t[:, 1:] + t[:, :-1])
        pts = s[:, None, :] + mid[:, :, None] * d[:, None, :]
        idx = np.floor((pts - lower) / pitch).astype(np.int64)
        ok = (seg > 0) & np.all((idx >= 0) & (idx < shape), axis=2)
        idx = np.where(ok[:, :, None], idx, 0)
        lin = (idx[:, :, 0] * shape[1] + idx[:, :, 1]) * shape[2] + idx[:, :, 2]
        vals = np.where(ok, flat[lin] * seg, 0.0)
        out[c0:c0 + _NUMPY_RAY_CHUNK] = np.where(tmax > tmin, vals.sum(axis=1) * length, 0.0)


def trace_rays(data, lower, pitch, starts, ends):
    """Exact line integrals of a voxel field along segments ``starts -> ends``.

    ``data`` is indexed ``[ix, iy, iz]`` with voxel ``(0, 0, 0)`` spanning
    ``[lower, lower + pitch)``.  Returns an array of shape ``(n_rays,)``.
    """
    data = np.ascontiguousarray(data, dtype=np.float64)
    lower = np.asarray(lower, dtype=np.float64)
    starts = np.ascontiguousarray(np.asarray(starts, dtype=np.float64).reshape(-1, 3))
    ends = np.ascontiguousarray(np.asarray(ends, dtype=np.float64).reshape(-1, 3))
    out = np.zeros(starts.shape[0])
    if numba_enabled():
        _trace_rays_numba(data, lower, float(pitch), starts, ends, out)
    else:
        _trace_rays_numpy(data, lower, float(pitch), starts, ends, out)
    return out


# --------------------------------------------------------------------------
# voxel-driven cone-beam backprojection
# --------------------------------------------------------------------------

@njit(cache=True, parallel=True)
def _backproject_numba(filtered, cosb, sinb, weights, radius, u0, du, v0, dv,
                       xs, ys, zs, out):
    n_views, n_rows, n_cols = filtered.shape
    nx, ny, nz = out.shape
    for ix in prange(nx):
        x1 = xs[ix]
        for iy in range(ny):
            x2 = ys[iy]
            for b in range(n_views):
                big_u = radius - x1 * sinb[b] + x2 * cosb[b]
                if big_u <= 0.0:
                    continue
                mag = radius / big_u
                u = (x1 * cosb[b] + x2 * sinb[b]) * mag
                w = weights[b] * mag * mag
                fu = (u - u0) / du
                if fu < -0.5 or fu > n_cols - 0.5:
                    continue
                fu = min(max(fu, 0.0), n_cols - 1.0)
                ju = min(int(fu), n_cols - 2) if n_cols > 1 else 0
                au = fu - ju
                for iz in range(nz):
                    fv = (zs[iz] * mag - v0) / dv
                    if fv < -0.5 or fv > n_rows - 0.5:
                        continue
                    fv = min(max(fv, 0.0), n_rows - 1.0)
                    jv = min(int(fv), n_rows - 2) if n_rows > 1 else 0
                    av = fv - jv
                    if n_cols > 1 and n_rows > 1:
                        val = ((1 - av) * ((1 - au) * filtered[b, jv, ju] + au * filtered[b, jv, ju + 1])
                               + av * ((1 - au) * filtered[b, jv + 1, ju] + au * filtered[b, jv + 1, ju + 1]))
                    elif n_cols > 1:
                        val = (1 - au) * filtered[b, 0, ju] + au * filtered[b, 0, ju + 1]
                    elif n_rows > 1:
                        val = (1 - av) * filtered[b, jv, 0] + av * filtered[b, jv + 1, 0]
                    else:
                        val = filtered[b, 0, 0]
                    out[ix, iy, iz] += w * val


def _bilinear_axis(f, n):
    """Clamp a continuous index to ``[0, n-1]``; return floor index and weight."""
    valid = (f >= -0.5) & (f <= n - 0.5)
    f = np.clip(f, 0.0, n - 1.0)
    if n == 1:
        return np.zeros(f.shape, dtype=np.int64), np.zeros_like(f), valid
    j = np.minimum(f.astype(np.int64), n - 2)
    return j, f - j, valid


def _backproject_numpy(filtered, cosb, sinb, weights, radius, u0, du, v0, dv,
                       xs, ys, zs, out):
    n_views, n_rows, n_cols = filtered.shape
    x1, x2 = np.meshgrid(xs, ys, indexing="ij")
    for b in range(n_views):
        big_u = radius - x1 * sinb[b] + x2 * cosb[b]
        pos = big_u > 0
        mag = np.where(pos, radius / np.where(pos, big_u, 1.0), 0.0)
        u = (x1 * cosb[b] + x2 * sinb[b]) * mag
        ju, au, okc = _bilinear_axis((u - u0) / du, n_cols)
        fv = (zs[None, None, :] * mag[:, :, None] - v0) / dv
        jv, av, okr = _bilinear_axis(fv, n_rows)
        ju3 = ju[:, :, None]
        au3 = au[:, :, None]
        img = filtered[b]
        ju1 = np.minimum(ju3 + 1, n_cols - 1)
        jv1 = np.minimum(jv + 1, n_rows - 1)
        val = ((1 - av) * ((1 - au3) * img[jv, ju3] + au3 * img[jv, ju1])
               + av * ((1 - au3) * img[jv1, ju3] + au3 * img[jv1, ju1]))
        ok = (pos & okc)[:, :, None] & okr
        out += np.where(ok, (weights[b] * mag * mag)[:, :, None] * val, 0.0)


def backproject_views(filtered, angles, weights, radius, u0, du, v0, dv, xs, ys, zs):
    """Accumulate ``sum_b weights[b] * (R/U)^2 * filtered_b(u, v)`` on a grid.

    ``u0``/``v0`` are the coordinates of detector column/row 0; samples are
    bilinearly interpolated and zero outside the detector (half-pixel margin).
    """
    filtered = np.ascontiguousarray(filtered, dtype=np.float64)
    angles = np.asarray(angles, dtype=np.float64)
    cosb = np.cos(angles)
    sinb = np.sin(angles)
    weights = np.asarray(weights, dtype=np.float64)
    out = np.zeros((len(xs), len(ys), len(zs)))
    args = (filtered, cosb, sinb, weights, float(radius), float(u0), float(du),
            float(v0), float(dv), np.asarray(xs, dtype=np.float64),
            np.asarray(ys, dtype=np.float64), np.asarray(zs, dtype=np.float64), out)
    if numba_enabled():
        _backproject_numba(*args)
    else:
        _backproject_numpy(*args)
    return out


# --------------------------------------------------------------------------
# triangle rasterisation by axis crossings
# --------------------------------------------------------------------------
# Triangles are given in continuous voxel-index coordinates (voxel centres on
# integers).  A voxel is marked when a triangle crosses the segment of length
# one through its centre along some axis.  Every 6-connected path between
# voxel centres that crosses the surface therefore passes a marked voxel.
# For each marked voxel the nearest crossing decides whether its centre lies
# on the inner side (against the outward normal) of the surface.

_RASTER_EPS = 1e-9


def _update(surf, depth, inside, i, j, k, d, ins):
    if d < depth[i, j, k] - 1e-12:
        depth[i, j, k] = d
        inside[i, j, k] = ins
    elif d <= depth[i, j, k] + 1e-12:
        inside[i, j, k] = inside[i, j, k] or ins
    surf[i, j, k] = True


_update_numba = njit(cache=True)(_update)


@njit(cache=True)
def _rasterize_numba(tris, normals, surf, depth, inside):
    shape = surf.shape
    for t in range(tris.shape[0]):
        for a in range(3):
            b = (a + 1) % 3
            c = (a + 2) % 3
            p0b, p0c = tris[t, 0, b], tris[t, 0, c]
            p1b, p1c = tris[t, 1, b], tris[t, 1, c]
            p2b, p2c = tris[t, 2, b], tris[t, 2, c]
            area = (p1b - p0b) * (p2c - p0c) - (p1c - p0c) * (p2b - p0b)
            if abs(area) < 1e-12:
                continue
            lo_b = max(int(math.ceil(min(p0b, p1b, p2b) - _RASTER_EPS)), 0)
            hi_b = min(int(math.floor(max(p0b, p1b, p2b) + _RASTER_EPS)), shape[b] - 1)
            lo_c = max(int(math.ceil(min(p0c, p1c, p2c) - _RASTER_EPS)), 0)
            hi_c = min(int(math.floor(max(p0c, p1c, p2c) + _RASTER_EPS)), shape[c] - 1)
            for jb in range(lo_b, hi_b + 1):
                for jc in range(lo_c, hi_c + 1):
                    w0 = ((p1b - jb) * (p2c - jc) - (p1c - jc) * (p2b - jb)) / area
                    w1 = ((p2b - jb) * (p0c - jc) - (p2c - jc) * (p0b - jb)) / area
                    w2 = 1.0 - w0 - w1
                    if w0 < -_RASTER_EPS or w1 < -_RASTER_EPS or w2 < -_RASTER_EPS:
                        continue
                    x = w0 * tris[t, 0, a] + w1 * tris[t, 1, a] + w2 * tris[t, 2, a]
                    i0 = int(math.floor(x + 0.5))
                    for ia in (i0 - 1, i0):
                        # voxel ia owns the crossing if |ia - x| <= 1/2
                        if ia < 0 or ia >= shape[a] or abs(ia - x) > 0.5 + _RASTER_EPS:
                            continue
                        d = abs(ia - x)
                        ins = (ia - x) * normals[t, a] <= _RASTER_EPS
                        if a == 0:
                            _update_numba(surf, depth, inside, ia, jb, jc, d, ins)
                        elif a == 1:
                            _update_numba(surf, depth, inside, jc, ia, jb, d, ins)
                        else:
                            _update_numba(surf, depth, inside, jb, jc, ia, d, ins)


def _rasterize_numpy(tris, normals, surf, depth, inside):
    shape = surf.shape
    eps = _RASTER_EPS
    for t in range(tris.shape[0]):
        tri = tris[t]
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            pb, pc = tri[:, b], tri[:, c]
            area = (pb[1] - pb[0]) * (pc[2] - pc[0]) - (pc[1] - pc[0]) * (pb[2] - pb[0])
            if abs(area) < 1e-12:
                continue
            jb = np.arange(max(int(math.ceil(pb.min() - eps)), 0),
                           min(int(math.floor(pb.max() + eps)), shape[b] - 1) + 1)
            jc = np.arange(max(int(math.ceil(pc.min() - eps)), 0),
                           min(int(math.floor(pc.max() + eps)), shape[c] - 1) + 1)
            if len(jb) == 0 or len(jc) == 0:
                continue
            gb, gc = np.meshgrid(jb, jc, indexing="ij")
            gb, gc = gb.ravel(), gc.ravel()
            w0 = ((pb[1] - gb) * (pc[2] - gc) - (pc[1] - gc) * (pb[2] - gb)) / area
            w1 = ((pb[2] - gb) * (pc[0] - gc) - (pc[2] - gc) * (pb[0] - gb)) / area
            w2 = 1.0 - w0 - w1
            ok = (w0 >= -eps) & (w1 >= -eps) & (w2 >= -eps)
            if not ok.any():
                continue
            gb, gc = gb[ok], gc[ok]
            x = w0[ok] * tri[0, a] + w1[ok] * tri[1, a] + w2[ok] * tri[2, a]
            i0 = np.floor(x + 0.5).astype(np.int64)
            for ia in (i0 - 1, i0):
                d = np.abs(ia - x)
                keep = (ia >= 0) & (ia < shape[a]) & (d <= 0.5 + eps)
                ins = (ia - x) * normals[t, a] <= eps
                for n in np.flatnonzero(keep):
                    idx = [0, 0, 0]
                    idx[a], idx[b], idx[c] = ia[n], gb[n], gc[n]
                    _update(surf, depth, inside, idx[0], idx[1], idx[2], d[n], bool(ins[n]))


def rasterize_crossings(tris, normals, shape):
    """Surface voxels of a triangle set and whether their centres lie inside.

    ``tris`` has shape ``(m, 3, 3)`` in continuous voxel-index coordinates;
    ``normals`` are the outward face normals.  Returns ``(surface, inside)``
    boolean volumes.
    """
    tris = np.ascontiguousarray(tris, dtype=np.float64).reshape(-1, 3, 3)
    normals = np.ascontiguousarray(normals, dtype=np.float64).reshape(-1, 3)
    surf = np.zeros(shape, dtype=np.bool_)
    inside = np.zeros(shape, dtype=np.bool_)
    depth = np.full(shape, np.inf)
    if numba_enabled():
        _rasterize_numba(tris, normals, surf, depth, inside)
    else:
        _rasterize_numpy(tris, normals, surf, depth, inside)
    return surf, inside
