"""Energy-dependent attenuation tables and X-ray tube spectra."""
from dataclasses import dataclass
import csv
from importlib import resources

import numpy as np

from ..errors import NonNormalizedSpectrum

METALS = ("Au", "Pd", "Ni", "Cr", "Zr", "Al")
TISSUES = ("water", "soft_tissue", "bone", "enamel")


@dataclass(frozen=True)
class AttenuationCurve:
    energies: np.ndarray  # keV, strictly increasing
    mu: np.ndarray        # 1/mm

    def __call__(self, energy):
        e = np.asarray(energy, dtype=float)
        if np.any(e < self.energies[0]) or np.any(e > self.energies[-1]):
            raise ValueError(f"energy outside tabulated range "
                             f"[{self.energies[0]}, {self.energies[-1]}] keV")
        return np.interp(e, self.energies, self.mu)


class MaterialTable:
    """Linear attenuation coefficient mu(E) per material, linear in E between knots."""

    def __init__(self, curves):
        self.curves = {}
        for name, (energies, mu) in curves.items():
            energies = np.asarray(energies, dtype=float)
            mu = np.asarray(mu, dtype=float)
            if energies.shape != mu.shape or energies.ndim != 1 or len(energies) < 2:
                raise ValueError(f"{name}: need matching 1-D energy/mu arrays")
            if np.any(np.diff(energies) <= 0):
                raise ValueError(f"{name}: energies must be strictly increasing")
            if np.any(mu < 0):
                raise ValueError(f"{name}: attenuation must be non-negative")
            self.curves[name] = AttenuationCurve(energies, mu)

    @classmethod
    def default(cls):
        """Table bundled with the package (NIST-derived, see ``data/materials.csv``)."""
        with resources.files("cbctmar.data").joinpath("materials.csv").open() as fh:
            return cls.from_csv(fh)

    @classmethod
    def from_csv(cls, fh):
        rows = {}
        for row in csv.reader(line for line in fh if line.strip() and not line.startswith("#")):
            name, density, energy, mass_atten = row[0].strip(), *map(float, row[1:4])
            # cm^2/g * g/cm^3 = 1/cm -> 1/mm
            rows.setdefault(name, []).append((energy, mass_atten * density / 10.0))
        return cls({k: tuple(zip(*sorted(v))) for k, v in rows.items()})

    def __contains__(self, name):
        return name in self.curves

    def names(self):
        return list(self.curves)

    def mu(self, name, energy):
        return self.curves[name](energy)


@dataclass(frozen=True)
class Spectrum:
    """Normalised photon-number spectrum on discrete energy bins."""

    energies: np.ndarray
    weights: np.ndarray
    tube_voltage: float

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "weights", w)
        if e.shape != w.shape or e.ndim != 1:
            raise ValueError("energies and weights must be matching 1-D arrays")
        if np.any(w < 0):
            raise ValueError("spectrum weights must be non-negative")
        if np.any(e > self.tube_voltage + 1e-9):
            raise ValueError("spectrum extends beyond the tube voltage")

    def check_normalized(self, tol=1e-9):
        total = float(self.weights.sum())
        if abs(total - 1.0) > tol:
            raise NonNormalizedSpectrum(f"spectrum weights sum to {total!r}, expected 1")

    def normalized(self):
        return Spectrum(self.energies, self.weights / self.weights.sum(), self.tube_voltage)

    def nonzero(self):
        keep = self.weights > 0
        return self.energies[keep], self.weights[keep]

    def mean_energy(self):
        return float((self.energies * self.weights).sum() / self.weights.sum())

    @classmethod
    def single(cls, energy):
        return cls(np.array([float(energy)]), np.array([1.0]), float(energy))

    @classmethod
    def default(cls):
        """85 kVp tungsten-anode spectrum bundled as data, 1 keV bins."""
        with resources.files("cbctmar.data").joinpath("spectrum_w85kvp.csv").open() as fh:
            return cls.from_csv(fh).normalized()

    @classmethod
    def from_csv(cls, fh):
        kv = None
        e, w = [], []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "tube_voltage_kv" in line:
                    kv = float(line.split("=")[1])
                continue
            a, b = line.split(",")
            e.append(float(a))
            w.append(float(b))
        e = np.array(e)
        return cls(e, np.array(w), kv if kv is not None else float(e.max()))
