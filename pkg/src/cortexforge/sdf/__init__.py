"""Signed distance fields: exact queries, rasterization, sampling."""

from .index import SurfaceIndex, point_mesh_distance_bruteforce
from .volume import SdfVolume, mesh_to_sdf, sample_sdf, sdf_l2

__all__ = [
    "SurfaceIndex",
    "point_mesh_distance_bruteforce",
    "SdfVolume",
    "mesh_to_sdf",
    "sample_sdf",
    "sdf_l2",
]
