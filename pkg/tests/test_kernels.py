import os
import subprocess
import sys

import numpy as np
import pytest

from cbctmar._accel import HAVE_NUMBA, backend, set_backend
from cbctmar.kernels import backproject_views

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")

AXIS = np.linspace(-6.0, 6.0, 9)
R = 300.0


def test_constant_view_backprojects_magnification(kernel_backend):
    # one view at beta = 0: the source sits at (0, -R, 0), so U = R + y
    filtered = np.ones((20, 30))
    out = backproject_views(filtered[None], [0.0], [2.0], R, -14.5, 1.0, -9.5, 1.0, AXIS, AXIS, AXIS)
    expect = 2.0 * (R / (R + AXIS))[None, :, None] ** 2
    np.testing.assert_allclose(out, np.broadcast_to(expect, out.shape), rtol=1e-12)


def test_points_off_the_detector_get_nothing(kernel_backend):
    filtered = np.ones((4, 4))
    out = backproject_views(filtered[None], [0.0], [1.0], R, -1.5, 1.0, -1.5, 1.0,
                            np.array([0.0, 50.0]), np.array([0.0]), np.array([0.0, 50.0]))
    assert out[0, 0, 0] > 0
    assert out[1, 0, 0] == 0 and out[0, 0, 1] == 0 and out[1, 0, 1] == 0


def test_linear_ramp_is_interpolated_exactly(kernel_backend):
    # bilinear interpolation reproduces affine detector data
    u = -14.5 + np.arange(30)
    v = -9.5 + np.arange(20)
    filtered = 0.3 * u[None, :] - 0.2 * v[:, None] + 1.0
    out = backproject_views(filtered[None], [0.0], [1.0], R, -14.5, 1.0, -9.5, 1.0, AXIS, AXIS, AXIS)
    x, y, z = np.meshgrid(AXIS, AXIS, AXIS, indexing="ij")
    mag = R / (R + y)
    expect = mag ** 2 * (0.3 * x * mag - 0.2 * z * mag + 1.0)
    np.testing.assert_allclose(out, expect, rtol=1e-10, atol=1e-12)


@needs_numba
def test_backends_agree(rng):
    filtered = rng.normal(size=(24, 18, 26))
    angles = np.linspace(0, 2 * np.pi, 24, endpoint=False)
    weights = rng.random(24)
    xs = np.linspace(-8, 8, 11)
    args = (filtered, angles, weights, 120.0, -12.5, 1.0, -8.5, 1.0, xs, xs[:7], xs[2:9])
    with backend("numba"):
        a = backproject_views(*args)
    with backend("numpy"):
        b = backproject_views(*args)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_environment_flag_disables_numba():
    code = "from cbctmar._accel import numba_enabled; print(numba_enabled())"
    env = dict(os.environ, CBCTMAR_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    assert out.stdout.strip() == "False"


def test_unknown_backend():
    with pytest.raises(ValueError):
        set_backend("cuda")


def test_benchmark_script_runs(capsys):
    import runpy
    from pathlib import Path
    bench = runpy.run_path(str(Path(__file__).parents[1] / "benchmarks" / "bench_kernels.py"))
    bench["main"](["--repeat", "1", "--views", "1"])
    out = capsys.readouterr().out
    assert "trace_rays" in out and "DIFFER" not in out
