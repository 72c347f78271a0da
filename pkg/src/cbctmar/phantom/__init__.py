"""Digital phantoms: analytic primitives, dental label volumes, materials and spectra."""
from .analytic import AnalyticPhantom, Cuboid, Cylinder, Ellipsoid, make_analytic_phantom
from .dental import (BACKGROUND, BONE, METAL, SOFT_TISSUE, Insert, InsertSpec, LabelVolume,
                     MaterialMap, assign_materials, crown_region, load_crown_heights, make_crown_mask,
                     make_dental_phantom, make_implant_mask, make_insert, random_insert_specs,
                     synthesize_oral_scan)
from .materials import METALS, MaterialTable, Spectrum

__all__ = [
    "AnalyticPhantom", "Cuboid", "Cylinder", "Ellipsoid", "make_analytic_phantom",
    "BACKGROUND", "BONE", "METAL", "SOFT_TISSUE", "Insert", "InsertSpec", "LabelVolume",
    "MaterialMap", "assign_materials", "crown_region", "load_crown_heights", "make_crown_mask",
    "make_dental_phantom", "make_implant_mask", "make_insert", "random_insert_specs",
    "synthesize_oral_scan", "METALS", "MaterialTable", "Spectrum",
]
