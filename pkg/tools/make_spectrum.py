"""Regenerate ``src/cbctmar/data/spectrum_w85kvp.csv``.

Kramers bremsstrahlung continuum for a tungsten anode, tungsten K
fluorescence lines, and 2.5 mm aluminium-equivalent inherent filtration.
"""
import sys
from pathlib import Path

import numpy as np

from cbctmar.phantom.materials import MaterialTable

KVP = 85.0
AL_FILTER_MM = 2.5
# tungsten K lines (keV) and intensities relative to the continuum area
W_LINES = [(57.98, 0.035), (59.32, 0.061), (67.24, 0.021), (69.07, 0.006)]


def main(out):
    energies = np.arange(1.0, KVP + 1.0)
    phi = np.clip(KVP - energies, 0.0, None) / energies
    phi /= phi.sum()
    for e_line, rel in W_LINES:
        phi[np.argmin(np.abs(energies - e_line))] += rel
    table = MaterialTable.default()
    al = table.curves["Al"]
    mu = np.interp(energies, al.energies, al.mu, left=al.mu[0] * (al.energies[0] / energies[0]) ** 3)
    phi *= np.exp(-mu * AL_FILTER_MM)
    phi[phi < 1e-12] = 0.0
    phi /= phi.sum()
    with open(out, "w") as fh:
        fh.write("# tungsten anode, Kramers continuum + W K lines, 2.5 mm Al filtration\n")
        fh.write(f"# tube_voltage_kv = {KVP:g}\n")
        fh.write("# columns: energy_keV, normalized photon fraction\n")
        for e, w in zip(energies, phi):
            fh.write(f"{e:g},{w:.10e}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else
         Path(__file__).resolve().parents[1] / "src/cbctmar/data/spectrum_w85kvp.csv")
