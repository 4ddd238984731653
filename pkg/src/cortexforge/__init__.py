"""cortexforge: SDF-based cortical surface toolkit.

Submodules:
    volio    volume data model + NIfTI-1 I/O + resampling
    sdf      mesh <-> signed-distance-volume computation, L2 comparison
    mesh     triangle meshes: extraction, refinement, topology repair
    synth    domain-randomized synthetic image + SDF-target generator
    morpho   surface area, enclosed volume, cortical thickness, parcels
    metrics  ASD / HD90 / Dice / Pearson-CI / percentage error
    parcel   vertex labels: nearest-vertex transfer, lobe grouping
    cli      batch command-line front end
"""

__version__ = "0.1.0"

from .errors import (
    CortexForgeError,
    GeometryError,
    InputFormatError,
    TopologyError,
    UsageError,
)
from .volio import GridGeometry, NiftiHeader, VoxelGrid, read_volume, resample, write_volume

__all__ = [
    "__version__",
    "CortexForgeError",
    "UsageError",
    "InputFormatError",
    "GeometryError",
    "TopologyError",
    "VoxelGrid",
    "GridGeometry",
    "NiftiHeader",
    "read_volume",
    "write_volume",
    "resample",
]
