"""Cone-beam CT simulation, FDK reconstruction and metal artifact reduction.

Subpackages and modules
-----------------------
geometry    scan geometry, voxel grids and detector coordinate maps
phantom     analytic and dental phantoms, materials, spectra, metal inserts
projector   Siddon ray transform, polychromatic projection, noise, cropping
fdk         offset-detector FDK reconstruction
mar         metal trace, linear-interpolation MAR and the enhancer interface
alphashape  alpha shapes of oral scans and weighted thresholding
metrics     NMSE, SSIM, PSNR and Dice
cli         the ``cbctmar`` command
"""
from .errors import CbctMarError
from .geometry import ScanGeometry, Volume, VoxelGrid, angle_direction, detector_coords

__version__ = "0.1.0"

__all__ = ["CbctMarError", "ScanGeometry", "Volume", "VoxelGrid", "angle_direction",
           "detector_coords", "__version__"]
