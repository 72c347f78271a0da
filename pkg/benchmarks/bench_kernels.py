"""Numba vs numpy timings for the three hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat N] [--views N]

Workloads use the default desk-scale setup (64^3 grid, 96 x 64 detector).
The first numba call includes JIT compilation and is reported separately.
"""
import argparse
import time

import numpy as np

from cbctmar._accel import HAVE_NUMBA, backend
from cbctmar.alphashape import PointCloud, _face_normals, alpha_shape_boundary
from cbctmar.kernels import backproject_views, rasterize_crossings, trace_rays
from cbctmar.phantom import make_dental_phantom
from cbctmar.pipeline import PipelineConfig
from cbctmar.projector import view_rays


def ray_workload(views):
    cfg = PipelineConfig()
    grid, geom = cfg.grid(), cfg.geometry()
    labels = make_dental_phantom(grid, seed=0)
    data = (labels.labels > 0).astype(np.float64) * 0.02
    start, end = view_rays(geom, np.arange(views))
    lower = grid.lower_corner()
    return lambda: trace_rays(data, lower, grid.pitch, start, end), f"{len(start)} rays"


def backprojection_workload(views):
    cfg = PipelineConfig()
    grid = cfg.grid()
    geom = cfg.geometry()
    rng = np.random.default_rng(0)
    filtered = rng.normal(size=(views, geom.detector_rows, geom.detector_cols))
    angles = geom.angle_array()[:views]
    weights = np.full(views, 2 * np.pi / geom.n_angles)
    u, v = geom.u_coords(), geom.v_coords()
    xs, ys, zs = (grid.axis_coords(a) for a in range(3))
    return (lambda: backproject_views(filtered, angles, weights, geom.source_to_isocenter,
                                      u[0], geom.pixel_pitch_u, v[0], geom.pixel_pitch_v,
                                      xs, ys, zs),
            f"{views} views onto {grid.nx}^3")


def raster_workload():
    n = 2000
    k = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * k / n)
    th = np.pi * (1 + 5 ** 0.5) * k
    pts = 25.0 * np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], 1)
    b = alpha_shape_boundary(PointCloud(pts), 30.0)
    tris = b.points[b.triangles] + 32.0
    normals = _face_normals(b.points, b.triangles)
    return lambda: rasterize_crossings(tris, normals, (64, 64, 64)), f"{len(tris)} triangles"


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--views", type=int, default=16, help="views per workload (default 16)")
    args = ap.parse_args(argv)
    workloads = [("trace_rays", *ray_workload(args.views)),
                 ("backproject_views", *backprojection_workload(args.views)),
                 ("rasterize_crossings", *raster_workload())]
    print(f"{'kernel':<21s} {'workload':<24s} {'numpy s':>9s} {'numba s':>9s} "
          f"{'speed-up':>9s} {'jit s':>7s}")
    for name, fn, what in workloads:
        with backend("numpy"):
            ref = fn()
            t_np = best_of(fn, args.repeat)
        if HAVE_NUMBA:
            with backend("numba"):
                t0 = time.perf_counter()
                out = fn()
                jit = time.perf_counter() - t0
                t_nb = best_of(fn, args.repeat)
            same = all(np.allclose(a, b, rtol=1e-10, atol=1e-12) for a, b in
                       zip(ref if isinstance(ref, tuple) else (ref,),
                           out if isinstance(out, tuple) else (out,)))
            print(f"{name:<21s} {what:<24s} {t_np:9.3f} {t_nb:9.3f} {t_np / t_nb:8.1f}x "
                  f"{max(jit - t_nb, 0):7.2f}{'' if same else '  OUTPUTS DIFFER'}")
        else:
            print(f"{name:<21s} {what:<24s} {t_np:9.3f} {'n/a':>9s}")


if __name__ == "__main__":
    main()
