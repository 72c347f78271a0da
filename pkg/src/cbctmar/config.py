"""INI configuration for the command line pipeline.

Every key is optional; missing keys keep the :class:`PipelineConfig`
defaults.  Errors name the offending line.
"""
import configparser
import dataclasses
import io as _io

from .errors import ConfigError
from .phantom.materials import METALS
from .pipeline import PipelineConfig

# section -> key -> (PipelineConfig field, parser)
SCHEMA = {
    "geometry": {
        "views": ("views", int),
        "source_to_isocenter": ("source_to_isocenter", float),
        "detector_cols": ("detector_cols", int),
        "detector_rows": ("detector_rows", int),
        "pixel_pitch_u": ("pixel_pitch_u", float),
        "pixel_pitch_v": ("pixel_pitch_v", float),
        "detector_offset": ("detector_offset", float),
    },
    "phantom": {
        "grid_size": ("grid_size", int),
        "voxel_pitch": ("voxel_pitch", float),
        "n_inserts_min": ("n_inserts", int),
        "n_inserts_max": ("n_inserts", int),
        "thickness_min": ("thickness_range", float),
        "thickness_max": ("thickness_range", float),
        "screw_radius": ("screw_radius", float),
        "metals": ("metals", str),
    },
    "simulation": {
        "incident_photons": ("incident_photons", float),
        "gaussian_sigma": ("gaussian_sigma", float),
        "reference_energy": ("reference_energy", float),
    },
    "mar": {
        "metal_threshold": ("metal_threshold", float),
    },
    "segment": {
        "alpha": ("alpha", float),
        "extension": ("extension", float),
        "tau": ("tau", float),
        "scan_jitter": ("scan_jitter", float),
        "scan_crowns_only": ("scan_crowns_only", bool),
    },
}

DEFAULT_CONFIG = """\
# cbctmar pipeline configuration.  Lengths in mm, attenuation in 1/mm.

[geometry]
# desk-scale offset-detector scan; a clinical-size scan is reachable by
# raising views, detector size and grid size
views = 180
source_to_isocenter = 300.0
detector_cols = 96
detector_rows = 64
pixel_pitch_u = 0.45
pixel_pitch_v = 0.7
detector_offset = 10.8

[phantom]
grid_size = 64
voxel_pitch = 0.6
# number of metal inserts drawn per case
n_inserts_min = 2
n_inserts_max = 5
# crown shell thickness range
thickness_min = 0.6
thickness_max = 1.4
screw_radius = 1.5
metals = Au, Pd, Ni, Cr, Zr, Al

[simulation]
# bundled spectrum: 85 kVp tungsten anode, 1 keV bins
incident_photons = 1e5
gaussian_sigma = 0.01
# reference energy for the artifact-free data; blank = spectrum mean
reference_energy =

[mar]
metal_threshold = 0.3

[segment]
alpha = 2.5
extension = 3.0
tau = 0.045
scan_jitter = 0.02
# oral scan covers only the exposed crowns, as an optical scanner would
scan_crowns_only = yes
"""


def _boolean(raw):
    states = configparser.ConfigParser.BOOLEAN_STATES
    if raw.lower() not in states:
        raise ValueError(f"expected yes/no, got {raw!r}")
    return states[raw.lower()]


def _key_lines(text):
    lines = {}
    section = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            lines[(section, None)] = no
        elif line and not line.startswith(("#", ";")) and ("=" in line or ":" in line):
            key = line.split("=", 1)[0].split(":", 1)[0].strip().lower()
            lines[(section, key)] = no
    return lines


def parse_config(text, base=PipelineConfig()):
    """Parse INI text into a :class:`PipelineConfig`."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any [section]", exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"cannot parse: {exc.errors[0][1] if exc.errors else exc}", line)
    except configparser.Error as exc:
        raise ConfigError(str(exc), getattr(exc, "lineno", None))
    lines = _key_lines(text)
    values = {}
    pairs = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", lines.get((section, None)))
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", line)
            field, conv = SCHEMA[section][key]
            raw = raw.strip()
            if raw == "":
                if field == "reference_energy":
                    values[field] = None
                    continue
                raise ConfigError(f"{key} needs a value", line)
            try:
                if key == "metals":
                    val = tuple(m.strip() for m in raw.split(",") if m.strip())
                    bad = [m for m in val if m not in METALS]
                    if bad or not val:
                        raise ValueError(f"unsupported metals {bad}; choose from {METALS}")
                elif conv is bool:
                    val = _boolean(raw)
                else:
                    val = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}", line) from None
            if field in ("n_inserts", "thickness_range"):
                pairs.setdefault(field, {})[key.rsplit("_", 1)[1]] = (val, line)
            else:
                values[field] = val
    for field, parts in pairs.items():
        lo, hi = getattr(base, field)
        lo = parts.get("min", (lo, None))[0]
        hi = parts.get("max", (hi, None))[0]
        if lo > hi:
            line = parts.get("min", parts.get("max"))[1]
            raise ConfigError(f"{field}: minimum {lo} exceeds maximum {hi}", line)
        values[field] = (lo, hi)
    cfg = dataclasses.replace(base, **values)
    _validate(cfg, lines)
    return cfg


def _validate(cfg, lines):
    def fail(msg, section, key):
        raise ConfigError(msg, lines.get((section, key)))
    if cfg.views < 1:
        fail("views must be >= 1", "geometry", "views")
    if cfg.grid_size < 4:
        fail("grid_size must be >= 4", "phantom", "grid_size")
    if not 0.6 <= cfg.thickness_range[0] <= cfg.thickness_range[1] <= 1.4:
        fail("crown thickness must lie within [0.6, 1.4] mm", "phantom", "thickness_min")
    if not 1.0 <= cfg.screw_radius <= 2.5:
        fail("screw_radius must lie within [1.0, 2.5] mm", "phantom", "screw_radius")
    if cfg.n_inserts[0] < 1:
        fail("n_inserts_min must be >= 1", "phantom", "n_inserts_min")
    if cfg.incident_photons <= 0:
        fail("incident_photons must be positive", "simulation", "incident_photons")
    if cfg.alpha <= 0:
        fail("alpha must be positive", "segment", "alpha")


def load_config(path=None, base=PipelineConfig()):
    if path is None:
        return base
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), base)


def dump_config(cfg):
    """INI text reproducing ``cfg`` (used in run manifests)."""
    parser = configparser.ConfigParser()
    for section, keys in SCHEMA.items():
        parser[section] = {}
        for key, (field, _) in keys.items():
            val = getattr(cfg, field)
            if field in ("n_inserts", "thickness_range"):
                val = val[0] if key.endswith("_min") else val[1]
            elif field == "metals":
                val = ", ".join(val)
            elif val is None:
                val = ""
            elif isinstance(val, bool):
                val = "yes" if val else "no"
            parser[section][key] = str(val)
    buf = _io.StringIO()
    parser.write(buf)
    return buf.getvalue()
