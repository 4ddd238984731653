"""Triangle meshes: model, extraction, refinement, topology correction."""

from .correct import topology_correct
from .extract import marching_cubes
from .intersect import self_intersections, self_intersections_bruteforce
from .model import (
    TopologyReport,
    TriangleMesh,
    read_mesh,
    read_overlay,
    topology_report,
    vertex_adjacency,
    write_mesh,
    write_overlay,
)
from .refine import expand_pial, refine_to_sdf

__all__ = [
    "TriangleMesh",
    "TopologyReport",
    "read_mesh",
    "write_mesh",
    "read_overlay",
    "write_overlay",
    "topology_report",
    "vertex_adjacency",
    "marching_cubes",
    "self_intersections",
    "self_intersections_bruteforce",
    "refine_to_sdf",
    "expand_pial",
    "topology_correct",
]
