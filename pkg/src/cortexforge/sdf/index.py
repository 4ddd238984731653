"""Spatial index over a triangle surface plus the brute-force oracle.

The accelerated path (SurfaceIndex + numba kernels) and the oracle
(point_mesh_distance_bruteforce, pure vectorized numpy) are independent
implementations of the same exact point-triangle distance; tests pin them
against each other to 1e-6 mm.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import GeometryError, TopologyError, UsageError
from . import kernels

_MAX_CELLS_PER_AXIS = 192


def mesh_arrays(mesh):
    """Accept a TriangleMesh-like object or a (vertices, triangles) pair."""
    if hasattr(mesh, "vertices") and hasattr(mesh, "triangles"):
        v, t = mesh.vertices, mesh.triangles
    else:
        v, t = mesh
    v = np.ascontiguousarray(v, dtype=np.float64)
    t = np.ascontiguousarray(t, dtype=np.int64)
    if v.ndim != 2 or v.shape[1] != 3 or t.ndim != 2 or t.shape[1] != 3:
        raise UsageError("mesh must be (V,3) vertices and (F,3) triangle indices")
    if t.size and (t.min() < 0 or t.max() >= len(v)):
        raise UsageError("triangle indices out of range")
    return v, t


def edge_counts(triangles: np.ndarray, n_vertices: int):
    """Unique undirected edges and their incidence counts."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.sort(e, axis=1)
    key = e[:, 0].astype(np.int64) * np.int64(n_vertices) + e[:, 1]
    uniq, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    edges = np.stack([uniq // n_vertices, uniq % n_vertices], axis=1)
    return edges, counts, inverse


def check_closed_manifold(vertices, triangles, what="mesh"):
    if len(triangles) == 0:
        raise TopologyError(f"{what} has no triangles")
    _, counts, _ = edge_counts(triangles, len(vertices))
    n_boundary = int(np.sum(counts == 1))
    n_over = int(np.sum(counts > 2))
    if n_boundary:
        raise TopologyError(f"{what} is open: {n_boundary} boundary edges")
    if n_over:
        raise TopologyError(f"{what} is non-manifold: {n_over} edges with >2 triangles")


class SurfaceIndex:
    """Uniform-grid triangle index with angle-weighted pseudo-normals.

    Cell size defaults to the median edge length. Queries return exact
    point-to-nearest-triangle distances; signed queries use the pseudo-normal
    at the closest feature (vertex / edge / face).
    """

    def __init__(self, mesh, require_closed: bool = False):
        v, t = mesh_arrays(mesh)
        if len(t) == 0:
            raise UsageError("cannot index an empty mesh")
        self.vertices = v
        self.triangles = t

        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        cross = np.cross(b - a, c - a)
        double_area = np.linalg.norm(cross, axis=1)
        n_degen = int(np.sum(double_area / 2.0 < 1e-12))
        if n_degen:
            raise GeometryError(f"{n_degen} degenerate triangles (area < 1e-12 mm^2)")
        if require_closed:
            check_closed_manifold(v, t)

        self.face_normals = cross / double_area[:, None]
        self._build_pseudo_normals(v, t, a, b, c)
        self._build_grid(v, t, a, b, c)

    # --- construction ---------------------------------------------------

    def _build_pseudo_normals(self, v, t, a, b, c):
        fn = self.face_normals

        def corner_angle(p, q, r):
            u = q - p
            w = r - p
            cosang = np.einsum("ij,ij->i", u, w) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1)
            )
            return np.arccos(np.clip(cosang, -1.0, 1.0))

        ang = np.stack(
            [corner_angle(a, b, c), corner_angle(b, c, a), corner_angle(c, a, b)], axis=1
        )
        vn = np.zeros((len(v), 3), dtype=np.float64)
        for i in range(3):
            np.add.at(vn, t[:, i], ang[:, i, None] * fn)
        norms = np.linalg.norm(vn, axis=1)
        self.vertex_normals = vn / np.where(norms > 0, norms, 1.0)[:, None]

        edges, counts, inverse = edge_counts(t, len(v))
        acc = np.zeros((len(edges), 3), dtype=np.float64)
        np.add.at(acc, inverse, np.concatenate([fn, fn, fn]))
        per_face_edge = acc[inverse].reshape(3, len(t), 3).transpose(1, 0, 2)
        norms = np.linalg.norm(per_face_edge, axis=2)
        self.edge_normals = per_face_edge / np.where(norms > 0, norms, 1.0)[..., None]
        self.n_boundary_edges = int(np.sum(counts == 1))

    def _build_grid(self, v, t, a, b, c):
        edge_len = np.concatenate(
            [
                np.linalg.norm(b - a, axis=1),
                np.linalg.norm(c - b, axis=1),
                np.linalg.norm(a - c, axis=1),
            ]
        )
        cs = float(np.median(edge_len))
        lo = v.min(axis=0)
        hi = v.max(axis=0)
        extent = np.maximum(hi - lo, 1e-9)
        if cs <= 0:
            cs = float(extent.max()) / 16.0
        # cap the lattice; widen cells if the mesh is large relative to edges
        while np.any(np.ceil(extent / cs) > _MAX_CELLS_PER_AXIS):
            cs *= 2.0
        eps = 1e-9 + 1e-9 * extent.max()
        self.cell_size = cs
        self.origin = lo - eps
        nc = np.maximum(np.ceil((hi - self.origin + eps) / cs).astype(np.int64), 1)
        self.n_cells = nc

        tmin = np.minimum(np.minimum(a, b), c)
        tmax = np.maximum(np.maximum(a, b), c)
        tri_lo = np.clip(((tmin - self.origin) / cs).astype(np.int64), 0, nc - 1)
        tri_hi = np.clip(((tmax - self.origin) / cs).astype(np.int64), 0, nc - 1)

        counts = np.zeros(tuple(nc), dtype=np.int64)
        kernels.fill_cell_counts(tri_lo, tri_hi, counts)
        counts_flat = counts.ravel()
        starts = np.zeros(counts_flat.size, dtype=np.int64)
        np.cumsum(counts_flat[:-1], out=starts[1:])
        cell_tris = np.empty(int(counts_flat.sum()), dtype=np.int64)
        kernels.fill_cell_tris(tri_lo, tri_hi, starts.copy(), cell_tris, int(nc[1]), int(nc[2]))

        self._starts = starts
        self._counts = counts_flat
        self._cell_tris = cell_tris
        # per-cell distance (in cells) to the nearest occupied cell: lets far
        # queries start their ring sweep at the right radius
        occupied = counts > 0
        if occupied.all():
            hint = np.zeros(counts.shape, dtype=np.float64)
        else:
            hint = ndimage.distance_transform_edt(~occupied)
        self._cell_hint = np.ascontiguousarray(hint.ravel(), dtype=np.float64)

        self._tpack = np.concatenate([a, b, c], axis=1)  # (F, 9)

    # --- queries ---------------------------------------------------------

    def query(self, points, clip_limit: float = np.inf):
        """Exact nearest-surface query.

        Returns (distances, triangle_ids, closest_points, features); entries
        farther than clip_limit come back as (clip_limit, -1, point, 0).
        """
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise UsageError("points must have shape (N, 3)")
        n = len(pts)
        out_dist = np.empty(n, dtype=np.float64)
        out_tri = np.empty(n, dtype=np.int64)
        out_q = np.empty((n, 3), dtype=np.float64)
        out_feat = np.empty(n, dtype=np.int64)
        limit = float(clip_limit) if np.isfinite(clip_limit) else 1e30
        kernels.query_points(
            pts, self._tpack,
            float(self.origin[0]), float(self.origin[1]), float(self.origin[2]),
            float(self.cell_size),
            int(self.n_cells[0]), int(self.n_cells[1]), int(self.n_cells[2]),
            self._starts, self._counts, self._cell_tris, self._cell_hint,
            limit, out_dist, out_tri, out_q, out_feat,
        )
        return out_dist, out_tri, out_q, out_feat

    def unsigned_distance(self, points, clip_limit: float = np.inf) -> np.ndarray:
        return self.query(points, clip_limit)[0]

    def signed_distance(self, points, clip_limit: float = np.inf) -> np.ndarray:
        """Pseudo-normal signed distance (negative inside a closed mesh)."""
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        dist, tri, q, feat = self.query(pts, clip_limit)
        sign = np.empty(len(pts), dtype=np.float64)
        kernels.pseudo_normal_signs(
            pts, q, feat, tri, self.triangles,
            self.face_normals, self.edge_normals, self.vertex_normals, sign,
        )
        return sign * dist


def point_mesh_distance_bruteforce(points, mesh) -> np.ndarray:
    """Exhaustive exact point-triangle distances, float64; the oracle path.

    Vectorized over triangles with the same region classification as the
    accelerated kernel, written independently on numpy.
    """
    v, t = mesh_arrays(mesh)
    if len(t) == 0:
        raise UsageError("mesh has no triangles")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    squeeze = np.asarray(points).ndim == 1

    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    ab = b - a
    ac = c - a
    bc = c - b

    out = np.empty(len(pts), dtype=np.float64)
    chunk = max(1, int(2_000_000 // max(len(t), 1)))
    for s in range(0, len(pts), chunk):
        p = pts[s : s + chunk]  # (P,3)
        ap = p[:, None, :] - a[None, :, :]  # (P,F,3)
        d1 = np.einsum("fd,pfd->pf", ab, ap)
        d2 = np.einsum("fd,pfd->pf", ac, ap)
        bp = p[:, None, :] - b[None, :, :]
        d3 = np.einsum("fd,pfd->pf", ab, bp)
        d4 = np.einsum("fd,pfd->pf", ac, bp)
        cp = p[:, None, :] - c[None, :, :]
        d5 = np.einsum("fd,pfd->pf", ab, cp)
        d6 = np.einsum("fd,pfd->pf", ac, cp)
        va = d3 * d6 - d5 * d4
        vb = d5 * d2 - d1 * d6
        vc = d1 * d4 - d3 * d2

        region = np.full(d1.shape, -1, dtype=np.int8)
        conds = [
            (d1 <= 0) & (d2 <= 0),                          # vertex A
            (d3 >= 0) & (d4 <= d3),                         # vertex B
            (vc <= 0) & (d1 >= 0) & (d3 <= 0),              # edge AB
            (d6 >= 0) & (d5 <= d6),                         # vertex C
            (vb <= 0) & (d2 >= 0) & (d6 <= 0),              # edge CA
            (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),    # edge BC
        ]
        for code, cond in enumerate(conds):
            region[(region < 0) & cond] = code
        region[region < 0] = 6

        def safe_div(num, den):
            return num / np.where(den == 0, 1.0, den)

        t_ab = np.clip(safe_div(d1, d1 - d3), 0.0, 1.0)
        t_ca = np.clip(safe_div(d2, d2 - d6), 0.0, 1.0)
        t_bc = np.clip(safe_div(d4 - d3, (d4 - d3) + (d5 - d6)), 0.0, 1.0)
        denom = va + vb + vc
        vface = safe_div(vb, denom)
        wface = safe_div(vc, denom)

        q = np.where(
            (region == 0)[..., None], a[None],
            np.where(
                (region == 1)[..., None], b[None],
                np.where(
                    (region == 2)[..., None], a[None] + t_ab[..., None] * ab[None],
                    np.where(
                        (region == 3)[..., None], c[None],
                        np.where(
                            (region == 4)[..., None], a[None] + t_ca[..., None] * ac[None],
                            np.where(
                                (region == 5)[..., None], b[None] + t_bc[..., None] * bc[None],
                                a[None] + vface[..., None] * ab[None] + wface[..., None] * ac[None],
                            ),
                        ),
                    ),
                ),
            ),
        )
        out[s : s + chunk] = np.sqrt(((p[:, None, :] - q) ** 2).sum(axis=2).min(axis=1))
    return out[0] if squeeze else out
