"""Toolkit file formats.

Volumes, masks and sinograms are stored as a raw little-endian array
(``name.raw``) plus a plain-text sidecar header (``name.hdr``)::

    magic = CBCTMAR
    version = 1
    kind = volume
    dtype = <f4
    dims = 64 64 64
    pitch = 0.6
    origin = 0.0 0.0 0.0
    geometry_hash = 1f0c...

Sinogram headers additionally carry every scan-geometry field so the
geometry can be rebuilt and its hash re-checked.  Point clouds and meshes
use ASCII STL.
"""
import json
import os

import numpy as np

from .errors import CbctMarError, GeometryMismatch
from .geometry import ScanGeometry, Volume, VoxelGrid
from .projector import Sinogram

MAGIC = "CBCTMAR"
VERSION = 1

DEFAULT_DTYPES = {"volume": "<f4", "mask": "|u1", "labels": "<i2", "sinogram": "<f4"}


class FormatError(CbctMarError):
    """Malformed or foreign file."""


def _paths(path):
    stem = str(path)
    if stem.endswith(".hdr") or stem.endswith(".raw"):
        stem = stem[:-4]
    return stem + ".hdr", stem + ".raw"


def _write(path, array, header):
    hdr, raw = _paths(path)
    os.makedirs(os.path.dirname(os.path.abspath(hdr)), exist_ok=True)
    dtype = np.dtype(header["dtype"])
    np.ascontiguousarray(array, dtype=dtype).tofile(raw)
    lines = [f"magic = {MAGIC}", f"version = {VERSION}"]
    lines += [f"{k} = {v}" for k, v in header.items()]
    with open(hdr, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return hdr


def read_header(path):
    hdr, _ = _paths(path)
    if not os.path.exists(hdr):
        raise FileNotFoundError(f"missing header {hdr}")
    out = {}
    with open(hdr, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError(f"{hdr}: malformed line {line!r}")
            out[key.strip()] = value.strip()
    if out.get("magic") != MAGIC:
        raise FormatError(f"{hdr}: not a {MAGIC} header")
    if int(out.get("version", -1)) != VERSION:
        raise FormatError(f"{hdr}: unsupported version {out.get('version')}")
    return out


def _read_array(path, header, dims):
    _, raw = _paths(path)
    if not os.path.exists(raw):
        raise FileNotFoundError(f"missing data file {raw}")
    data = np.fromfile(raw, dtype=np.dtype(header["dtype"]))
    if data.size != int(np.prod(dims)):
        raise FormatError(f"{raw}: expected {int(np.prod(dims))} values, found {data.size}")
    return data.reshape(dims)


def _floats(text):
    return tuple(float(t) for t in text.split())


def write_volume(path, volume, kind="volume", geometry_hash=None, dtype=None, **extra):
    """Write a :class:`Volume` (``kind`` in volume / mask / labels)."""
    dtype = dtype or DEFAULT_DTYPES.get(kind, "<f4")
    g = volume.grid
    header = {
        "kind": kind,
        "dtype": np.dtype(dtype).str,
        "dims": f"{g.nx} {g.ny} {g.nz}",
        "pitch": repr(float(g.pitch)),
        "origin": " ".join(repr(float(o)) for o in g.origin),
        "geometry_hash": geometry_hash or "none",
    }
    header.update({k: str(v) for k, v in extra.items()})
    return _write(path, volume.data, header)


def read_volume(path, expect_hash=None):
    """Read a volume-like file; masks come back as bool arrays."""
    h = read_header(path)
    if h.get("kind") == "sinogram":
        raise FormatError(f"{path} holds a sinogram, not a volume")
    dims = tuple(int(d) for d in h["dims"].split())
    grid = VoxelGrid(*dims, float(h["pitch"]), _floats(h["origin"]))
    data = _read_array(path, h, dims)
    if h.get("kind") == "mask":
        data = data.astype(bool)
    elif h.get("kind") == "volume":
        data = data.astype(np.float64)
    check_hash(path, h, expect_hash)
    return Volume(data, grid)


def check_hash(path, header, expect_hash):
    if expect_hash is not None and header.get("geometry_hash") != expect_hash:
        raise GeometryMismatch(f"{path}: geometry hash {header.get('geometry_hash')} "
                               f"does not match the configured {expect_hash}")


def write_sinogram(path, sino, dtype="<f4"):
    g = sino.geometry
    header = {
        "kind": "sinogram",
        "sino_kind": sino.kind,
        "dtype": np.dtype(dtype).str,
        "dims": f"{g.n_angles} {g.detector_rows} {g.detector_cols}",
        "geometry_hash": g.hash(),
        "source_to_isocenter": repr(g.source_to_isocenter),
        "pixel_pitch_u": repr(g.pixel_pitch_u),
        "pixel_pitch_v": repr(g.pixel_pitch_v),
        "detector_offset_u": repr(g.detector_offset_u),
        "angles": " ".join(repr(a) for a in g.angles),
    }
    return _write(path, sino.values, header)


def read_sinogram(path, expect_hash=None):
    h = read_header(path)
    if h.get("kind") != "sinogram":
        raise FormatError(f"{path} is not a sinogram")
    views, rows, cols = (int(d) for d in h["dims"].split())
    geom = ScanGeometry(float(h["source_to_isocenter"]), _floats(h["angles"]), cols, rows,
                        float(h["pixel_pitch_u"]), float(h["pixel_pitch_v"]),
                        float(h["detector_offset_u"]))
    if geom.hash() != h["geometry_hash"]:
        raise GeometryMismatch(f"{path}: stored geometry does not reproduce its hash")
    check_hash(path, h, expect_hash)
    data = _read_array(path, h, (views, rows, cols)).astype(np.float64)
    return Sinogram(data, geom, h.get("sino_kind", "mono"))


# --------------------------------------------------------------------------
# ASCII STL
# --------------------------------------------------------------------------

def _fmt(v):
    return " ".join(f"{x:.9e}" for x in v)


def write_stl_points(path, points, name="oral_scan"):
    """Point cloud as degenerate facets (one vertex repeated three times)."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"solid {name}\n")
        for p in np.asarray(points, dtype=float):
            v = _fmt(p)
            fh.write(f"  facet normal 0 0 0\n    outer loop\n"
                     f"      vertex {v}\n      vertex {v}\n      vertex {v}\n"
                     f"    endloop\n  endfacet\n")
        fh.write(f"endsolid {name}\n")


def write_stl_mesh(path, points, triangles, normals=None, name="alpha_shape"):
    points = np.asarray(points, dtype=float)
    triangles = np.asarray(triangles)
    if normals is None:
        a, b, c = (points[triangles[:, i]] for i in range(3))
        normals = np.cross(b - a, c - a)
        normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-300)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"solid {name}\n")
        for tri, n in zip(triangles, normals):
            fh.write(f"  facet normal {_fmt(n)}\n    outer loop\n")
            for i in tri:
                fh.write(f"      vertex {_fmt(points[i])}\n")
            fh.write("    endloop\n  endfacet\n")
        fh.write(f"endsolid {name}\n")


def read_stl_vertices(path):
    """All ``vertex`` coordinates in file order (duplicates kept)."""
    out = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if parts and parts[0] == "vertex":
                if len(parts) != 4:
                    raise FormatError(f"{path}:{lineno}: malformed vertex line")
                out.append([float(x) for x in parts[1:]])
    return np.array(out, dtype=float).reshape(-1, 3)


def read_stl_points(path):
    """Deduplicated point cloud from an ASCII STL vertex list."""
    from .alphashape import PointCloud
    return PointCloud(read_stl_vertices(path))


def read_stl_mesh(path):
    """``(points, triangles)`` with shared vertices merged."""
    v = read_stl_vertices(path)
    if len(v) % 3:
        raise FormatError(f"{path}: vertex count is not a multiple of three")
    pts, inverse = np.unique(v, axis=0, return_inverse=True)
    return pts, inverse.reshape(-1, 3)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
