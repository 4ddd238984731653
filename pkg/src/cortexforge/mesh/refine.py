"""SDF-driven surface refinement and outward pial expansion.

Both optimize E(X) = sum_v sdf(x_v)^2 + lambda * sum_v |x_v - mean(N(v))|^2
by capped gradient descent with step halving, rejecting moves that create
self-intersections. expand_pial additionally keeps every vertex on or outside
the white surface by projecting violators back onto it.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage
from scipy.sparse import identity

from ..errors import TopologyError, UsageError
from ..sdf.index import SurfaceIndex, edge_counts
from ..sdf.volume import SdfVolume
from .intersect import self_intersections
from .model import TriangleMesh, vertex_adjacency

_MAX_UNTANGLE_ROUNDS = 8


def _require_manifold(mesh: TriangleMesh, what: str) -> None:
    if mesh.n_triangles == 0:
        raise TopologyError(f"{what} has no triangles")
    _, counts, _ = edge_counts(mesh.triangles, mesh.n_vertices)
    bad = int(np.sum(counts != 2))
    if bad:
        raise TopologyError(f"{what} is not a closed manifold: {bad} irregular edges")


class _SdfSampler:
    """Trilinear value + central-difference gradient, float64 data kept once.

    The difference stencil lives in index space (half-voxel offsets along the
    lattice axes, mapped back through the inverse-transpose affine), so a rigid
    motion of the geometry rotates the gradient exactly rather than resampling
    the field along new world directions.
    """

    def __init__(self, sdf: SdfVolume):
        self.data = sdf.data.astype(np.float64)
        geom = sdf.geometry
        self.inv = np.linalg.inv(geom.affine)
        self.dims = np.asarray(geom.dims, dtype=np.float64)
        h = 0.5
        self._idx_offsets = np.array(
            [
                [0.0, 0.0, 0.0],
                [+h, 0, 0], [-h, 0, 0],
                [0, +h, 0], [0, -h, 0],
                [0, 0, +h], [0, 0, -h],
            ]
        )

    def __call__(self, points: np.ndarray):
        base = points @ self.inv[:3, :3].T + self.inv[:3, 3]
        idx = (base[None, :, :] + self._idx_offsets[:, None, :]).reshape(-1, 3)
        if idx.min() < -1.0 - 1e-9 or np.any(idx.max(axis=0) > self.dims - 1 + 1.0 + 1e-9):
            raise UsageError("refinement moved a vertex outside the SDF lattice")
        vals = ndimage.map_coordinates(
            self.data, np.moveaxis(idx, -1, 0), order=1, mode="nearest"
        ).reshape(7, -1)
        grad_idx = np.stack(
            [vals[1] - vals[2], vals[3] - vals[4], vals[5] - vals[6]], axis=1
        )
        return vals[0], grad_idx @ self.inv[:3, :3]


def _descend(mesh, sdf, step_mm, iters, lambda_smooth, constrain=None):
    """Shared optimizer; returns (vertices, energy trace per iteration)."""
    sampler = _SdfSampler(sdf)
    adj = vertex_adjacency(mesh)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    if (deg == 0).any():
        raise TopologyError("mesh has isolated vertices")
    w = adj.multiply(1.0 / deg[:, None]).tocsr()
    lap = identity(mesh.n_vertices, format="csr") - w
    lap_t = lap.T.tocsr()
    tris = mesh.triangles
    # stability bound: never move a vertex more than 0.4 of the smallest
    # lattice edge in one iteration (extracted meshes carry sliver edges, so
    # the lattice pitch is the meaningful local length scale)
    cap = 0.4 * float(sdf.geometry.spacing.min())

    def energy(x):
        vals, _ = sampler(x)
        resid = lap @ x
        return float(np.sum(vals * vals) + lambda_smooth * np.sum(resid * resid)), vals

    x = mesh.vertices.copy()
    if constrain is not None:
        x = constrain(x)
    e_cur, _ = energy(x)
    step = float(step_mm)
    trace = [e_cur]

    for _ in range(int(iters)):
        vals, grads = sampler(x)
        g = 2.0 * vals[:, None] * grads + 2.0 * lambda_smooth * (lap_t @ (lap @ x))
        cand = x - step * g
        disp = cand - x
        norms = np.linalg.norm(disp, axis=1)
        over = norms > cap
        if over.any():
            disp[over] *= (cap / norms[over])[:, None]
            cand = x + disp
        if constrain is not None:
            cand = constrain(cand)

        # roll back vertices of intersecting triangles until clean
        for _round in range(_MAX_UNTANGLE_ROUNDS):
            n_bad, pairs = self_intersections(TriangleMesh(cand, tris))
            if n_bad == 0:
                break
            off = np.unique(tris[pairs.ravel()].ravel())
            if np.array_equal(cand[off], x[off]):
                break  # offenders already at previous positions: inherited
            cand[off] = x[off]
        else:
            cand = x.copy()

        e_new, _ = energy(cand)
        if e_new <= e_cur:
            x = cand
            e_cur = e_new
        else:
            step *= 0.5
        trace.append(e_cur)
    return x, np.array(trace)


def refine_to_sdf(mesh: TriangleMesh, sdf: SdfVolume, step_mm: float = 0.1,
                  iters: int = 100, lambda_smooth: float = 0.1,
                  return_trace: bool = False):
    """Align a closed manifold mesh with the zero level of an SDF."""
    _require_manifold(mesh, "refinement input")
    if not isinstance(sdf, SdfVolume):
        raise UsageError("refine_to_sdf expects an SdfVolume")
    x, trace = _descend(mesh, sdf, step_mm, iters, lambda_smooth)
    out = mesh.with_vertices(x)
    return (out, trace) if return_trace else out


def expand_pial(white: TriangleMesh, pial_sdf: SdfVolume, step_mm: float = 0.1,
                iters: int = 100, lambda_smooth: float = 0.1,
                return_trace: bool = False):
    """Grow the pial surface outward from the white mesh.

    The result reuses the white connectivity unchanged (vertex k of the output
    corresponds to vertex k of the white mesh). No vertex is allowed a negative
    signed distance to the white surface; violating moves are projected back
    onto it.
    """
    _require_manifold(white, "white mesh")
    if not isinstance(pial_sdf, SdfVolume):
        raise UsageError("expand_pial expects an SdfVolume")
    white_index = SurfaceIndex(white)

    def constrain(x):
        signed = white_index.signed_distance(x)
        viol = signed < 0
        if viol.any():
            _, _, q, _ = white_index.query(x[viol])
            x = x.copy()
            x[viol] = q
        return x

    x, trace = _descend(white, pial_sdf, step_mm, iters, lambda_smooth,
                        constrain=constrain)
    out = white.with_vertices(x)
    return (out, trace) if return_trace else out
