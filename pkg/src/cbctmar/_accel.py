"""Kernel backend selection.

Hot loops (ray traversal, backprojection) exist twice: a numba ``@njit``
version and a vectorised numpy version.  Set ``CBCTMAR_DISABLE_NUMBA=1`` to
force the numpy path, or use :func:`backend` to switch temporarily.
"""
import contextlib
import os

try:
    import numba
    from numba import njit, prange
    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the system TBB is too old for numba; avoid the probe warning
        numba.config.THREADING_LAYER = "omp"
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

    prange = range

_FLAG = os.environ.get("CBCTMAR_DISABLE_NUMBA", "").strip().lower()
_use_numba = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def numba_enabled():
    return _use_numba


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels process-wide."""
    global _use_numba
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        _use_numba = True
    elif name == "numpy":
        _use_numba = False
    else:
        raise ValueError(f"unknown backend {name!r}")


@contextlib.contextmanager
def backend(name):
    previous = "numba" if _use_numba else "numpy"
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


__all__ = ["HAVE_NUMBA", "njit", "prange", "numba_enabled", "set_backend", "backend"]
