"""Signed distance volumes: rasterization from meshes, sampling, comparison."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import GeometryError, UsageError
from ..volio import GridGeometry, VoxelGrid
from . import kernels
from .index import SurfaceIndex, check_closed_manifold, mesh_arrays


@dataclass(frozen=True)
class SdfVolume:
    """A clipped signed distance field on a voxel lattice (mm units).

    Negative inside, positive outside, magnitudes saturate at clip_mm.
    """

    grid: VoxelGrid
    clip_mm: float = 5.0

    def __post_init__(self):
        if self.grid.data.dtype != np.float32:
            raise UsageError("SDF volumes must be float32")
        if not (self.clip_mm > 0):
            raise UsageError("clip_mm must be positive")
        amax = float(np.abs(self.grid.data).max()) if self.grid.data.size else 0.0
        if amax > self.clip_mm * (1 + 1e-5):
            raise UsageError(
                f"SDF values exceed clip range: |max| = {amax:.4f} > {self.clip_mm}"
            )

    @property
    def geometry(self) -> GridGeometry:
        return self.grid.geometry

    @property
    def data(self) -> np.ndarray:
        return self.grid.data


def mesh_to_sdf(mesh, geometry: GridGeometry, clip_mm: float = 5.0) -> SdfVolume:
    """Rasterize a closed mesh to a clipped signed distance volume.

    Sign comes from the angle-weighted pseudo-normal at the closest feature,
    cross-checked by a flood fill from the volume border: any far region
    reachable from outside is forced positive.
    """
    v, t = mesh_arrays(mesh)
    check_closed_manifold(v, t)
    if not (clip_mm > 0):
        raise UsageError("clip_mm must be positive")

    index = SurfaceIndex((v, t))  # raises GeometryError on degenerate triangles
    spacing = geometry.spacing
    max_sp = float(spacing.max())
    centers = geometry.voxel_centers()

    # query slightly beyond the clip so near-clip voxels still sign correctly
    limit = clip_mm + max_sp
    dist, tri, q, feat = index.query(centers, clip_limit=limit)
    sign = np.empty(len(centers), dtype=np.float64)
    kernels.pseudo_normal_signs(
        centers, q, feat, tri, index.triangles,
        index.face_normals, index.edge_normals, index.vertex_normals, sign,
    )

    dims = geometry.dims
    dist3 = dist.reshape(dims)
    sign3 = sign.reshape(dims)

    # Flood-fill cross-check. Between 6-neighbors both farther than half the
    # voxel pitch from the surface, the connecting segment cannot cross it, so
    # each far component carries one sign. Components touching the volume
    # border are outside; interior components take the consensus of their
    # members that found a triangle (voxels past the query limit have none).
    far = dist3 > 0.501 * max_sp
    labels, nlab = ndimage.label(far, structure=ndimage.generate_binary_structure(3, 1))
    if nlab:
        border = np.zeros(dims, dtype=bool)
        border[0, :, :] = border[-1, :, :] = True
        border[:, 0, :] = border[:, -1, :] = True
        border[:, :, 0] = border[:, :, -1] = True
        lab_flat = labels.ravel()
        signed_member = (lab_flat > 0) & (tri >= 0)
        n_pos = np.bincount(lab_flat[signed_member & (sign > 0)], minlength=nlab + 1)
        n_neg = np.bincount(lab_flat[signed_member & (sign < 0)], minlength=nlab + 1)
        comp_sign = np.where(n_neg > n_pos, -1.0, 1.0)
        comp_sign[np.unique(labels[border & far])] = 1.0
        sign3 = np.where(labels > 0, comp_sign[labels], sign3)

    out = np.clip(sign3 * dist3, -clip_mm, clip_mm).astype(np.float32)
    return SdfVolume(VoxelGrid(out, geometry.affine), clip_mm=float(clip_mm))


def sample_sdf(sdf: SdfVolume, points):
    """Trilinear SDF values and central-difference gradients at world points.

    Points must lie within the lattice bounds padded by one voxel; the
    gradient stencil (half the minimum spacing) must also stay in bounds.
    """
    pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise UsageError("points must have shape (N, 3)")
    geom = sdf.geometry
    data = sdf.data.astype(np.float64)
    dims = np.asarray(geom.dims)

    h = 0.5 * float(geom.spacing.min())
    offsets = np.array(
        [
            [0.0, 0.0, 0.0],
            [+h, 0.0, 0.0], [-h, 0.0, 0.0],
            [0.0, +h, 0.0], [0.0, -h, 0.0],
            [0.0, 0.0, +h], [0.0, 0.0, -h],
        ]
    )
    stacked = pts[None, :, :] + offsets[:, None, :]  # (7, N, 3)
    idx = geom.world_to_index(stacked.reshape(-1, 3)).reshape(7, -1, 3)

    lo = idx.min(axis=(0, 1))
    hi = idx.max(axis=(0, 1))
    if np.any(lo < -1.0 - 1e-9) or np.any(hi > dims - 1 + 1.0 + 1e-9):
        raise UsageError("sample point (or its gradient stencil) outside padded lattice bounds")

    coords = np.moveaxis(idx.reshape(-1, 3), -1, 0)
    vals = ndimage.map_coordinates(data, coords, order=1, mode="nearest").reshape(7, -1)

    values = vals[0]
    gradients = np.stack(
        [
            (vals[1] - vals[2]) / (2 * h),
            (vals[3] - vals[4]) / (2 * h),
            (vals[5] - vals[6]) / (2 * h),
        ],
        axis=1,
    )
    return values, gradients


def sdf_l2(a: SdfVolume, b: SdfVolume):
    """Sum and mean of squared voxelwise differences between two SDFs."""
    if a.geometry.dims != b.geometry.dims or not np.allclose(
        a.geometry.affine, b.geometry.affine, atol=1e-6
    ):
        raise UsageError("sdf_l2 requires identical lattice geometry")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    total = float(np.sum(diff * diff))
    return total, total / diff.size
