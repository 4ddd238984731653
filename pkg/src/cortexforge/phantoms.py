"""Analytic geometric phantoms for validation and demos.

Everything here has a closed-form ground truth (sphere areas/volumes, shell
thickness, torus genus, ...) so reconstruction and morphometry can be checked
without any acquired data.
"""

from __future__ import annotations

import numpy as np

from .volio import GridGeometry, VoxelGrid


def icosahedron(radius: float = 1.0, center=(0.0, 0.0, 0.0)):
    """The 12-vertex icosahedron: V=12, E=30, F=20."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
            (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
            (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts[0])
    tris = np.array(
        [
            (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
            (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
            (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
            (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
        ],
        dtype=np.int64,
    )
    return verts * radius + np.asarray(center, dtype=np.float64), tris


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)):
    """Subdivided icosahedron projected onto the sphere. 20*4^n triangles."""
    verts, tris = icosahedron(1.0)
    for _ in range(subdivisions):
        edge_mid = {}
        new_tris = []
        verts_list = [v for v in verts]

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in edge_mid:
                m = verts_list[a] + verts_list[b]
                m /= np.linalg.norm(m)
                edge_mid[key] = len(verts_list)
                verts_list.append(m)
            return edge_mid[key]

        for a, b, c in tris:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_tris += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        verts = np.array(verts_list)
        tris = np.array(new_tris, dtype=np.int64)
    return verts * radius + np.asarray(center, dtype=np.float64), tris


def bumpy_sphere(
    radius: float,
    amplitude: float,
    frequency: int = 3,
    subdivisions: int = 4,
    center=(0.0, 0.0, 0.0),
):
    """Sphere with a smooth sinusoidal radial perturbation.

    r(theta, phi) = radius + amplitude * sin(frequency*theta) * cos(frequency*phi)
    with theta the polar angle from +z and phi the azimuth.
    """
    verts, tris = icosphere(1.0, subdivisions)
    r = bumpy_radius(verts, radius, amplitude, frequency)
    return verts * r[:, None] + np.asarray(center, dtype=np.float64), tris


def bumpy_radius(directions: np.ndarray, radius: float, amplitude: float, frequency: int):
    """Analytic radius of the bumpy sphere along given unit directions."""
    d = np.asarray(directions, dtype=np.float64)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
    phi = np.arctan2(d[:, 1], d[:, 0])
    return radius + amplitude * np.sin(frequency * theta) * np.cos(frequency * phi)


def box_mesh(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)):
    """Axis-aligned box as 12 outward-oriented triangles; size may be scalar."""
    size = np.broadcast_to(np.asarray(size, dtype=np.float64), 3)
    sx, sy, sz = size / 2.0
    cx, cy, cz = center
    verts = np.array(
        [
            (cx - sx, cy - sy, cz - sz), (cx + sx, cy - sy, cz - sz),
            (cx + sx, cy + sy, cz - sz), (cx - sx, cy + sy, cz - sz),
            (cx - sx, cy - sy, cz + sz), (cx + sx, cy - sy, cz + sz),
            (cx + sx, cy + sy, cz + sz), (cx - sx, cy + sy, cz + sz),
        ],
        dtype=np.float64,
    )
    tris = np.array(
        [
            (0, 2, 1), (0, 3, 2),  # bottom  (z-)
            (4, 5, 6), (4, 6, 7),  # top     (z+)
            (0, 1, 5), (0, 5, 4),  # front   (y-)
            (2, 3, 7), (2, 7, 6),  # back    (y+)
            (0, 4, 7), (0, 7, 3),  # left    (x-)
            (1, 2, 6), (1, 6, 5),  # right   (x+)
        ],
        dtype=np.int64,
    )
    return verts, tris


def torus_mesh(major_radius=10.0, minor_radius=3.0, n_major=48, n_minor=24, center=(0, 0, 0)):
    """Triangulated torus: euler characteristic 0, genus 1."""
    u = np.arange(n_major) * (2 * np.pi / n_major)
    v = np.arange(n_minor) * (2 * np.pi / n_minor)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = (major_radius + minor_radius * np.cos(vv)) * np.cos(uu)
    y = (major_radius + minor_radius * np.cos(vv)) * np.sin(uu)
    z = minor_radius * np.sin(vv)
    verts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1) + np.asarray(center, float)

    tris = []
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            tris += [(a, b, c), (a, c, d)]
    return verts, np.array(tris, dtype=np.int64)


def sphere_sdf(geometry: GridGeometry, center, radius: float, clip_mm: float = 5.0) -> VoxelGrid:
    """Exact clipped signed distance to a sphere, sampled at voxel centers."""
    pts = geometry.voxel_centers()
    d = np.linalg.norm(pts - np.asarray(center, dtype=np.float64), axis=1) - radius
    d = np.clip(d, -clip_mm, clip_mm).astype(np.float32).reshape(geometry.dims)
    return VoxelGrid(d, geometry.affine)


def linear_sdf(geometry: GridGeometry, normal=(1.0, 0.0, 0.0), offset: float = 0.0) -> VoxelGrid:
    """Unclipped planar field f(p) = <p, n> - offset (unit |gradient|)."""
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    pts = geometry.voxel_centers()
    vals = (pts @ n - offset).astype(np.float32).reshape(geometry.dims)
    return VoxelGrid(vals, geometry.affine)


# Label values used by the brain-like phantom; the schema ships alongside in
# brain_phantom_schema().
PHANTOM_LABELS = {
    "background": 0,
    "extracerebral": 1,
    "left": 2,
    "right": 3,
    "cerebellum_brainstem": 4,
    "midline": 5,
}


def brain_phantom_schema() -> dict:
    """Label schema for brain_label_phantom, in the on-disk JSON shape."""
    return {
        "0": {"name": "background", "class": "background"},
        "1": {"name": "skull-scalp", "class": "extracerebral"},
        "2": {"name": "left-cerebrum", "class": "left"},
        "3": {"name": "right-cerebrum", "class": "right"},
        "4": {"name": "cerebellum-brainstem", "class": "cerebellum-brainstem"},
        "5": {"name": "midline-structures", "class": "midline"},
    }


def brain_label_phantom(shape=(64, 64, 64), spacing=1.0) -> VoxelGrid:
    """Toy head: two hemisphere half-balls, a midline slab, a cerebellar ball,
    all wrapped in an extracerebral shell. Symmetric in x about the center."""
    geom = GridGeometry.from_spacing(shape, (spacing,) * 3)
    nx, ny, nz = shape
    c = (np.array(shape, dtype=np.float64) - 1) / 2.0 * spacing
    pts = geom.voxel_centers().reshape(*shape, 3)
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    r_head = 0.42 * min(shape) * spacing
    r_brain = 0.34 * min(shape) * spacing

    dist = np.sqrt((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2)
    labels = np.zeros(shape, dtype=np.int16)
    labels[dist <= r_head] = PHANTOM_LABELS["extracerebral"]

    brain = dist <= r_brain
    labels[brain & (x < c[0] - spacing)] = PHANTOM_LABELS["left"]
    labels[brain & (x > c[0] + spacing)] = PHANTOM_LABELS["right"]
    labels[brain & (np.abs(x - c[0]) <= spacing)] = PHANTOM_LABELS["midline"]

    cb_center = c + np.array([0.0, -0.22, -0.22]) * min(shape) * spacing
    cb = np.sqrt((x - cb_center[0]) ** 2 + (y - cb_center[1]) ** 2 + (z - cb_center[2]) ** 2)
    labels[cb <= 0.10 * min(shape) * spacing] = PHANTOM_LABELS["cerebellum_brainstem"]

    return VoxelGrid(labels, geom.affine)
