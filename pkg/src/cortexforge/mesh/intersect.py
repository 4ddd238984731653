"""Self-intersection detection: exact triangle-triangle tests over grid candidates.

A pair of triangles counts as intersecting when they share any point and do
not share a vertex index. The elementary test is orientation-predicate based
(segment-against-triangle both ways, with a 2-D fallback for coplanar cases).
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from ..sdf import kernels as sdfk
from ..sdf.index import mesh_arrays

_MAX_CELLS_PER_AXIS = 192


@njit(cache=True, inline="always")
def _orient3d(ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz):
    """Signed volume with rounding dust snapped to exact zero.

    Near-coplanar configurations evaluate to ~1e-19 noise of arbitrary sign;
    anything below 1e-12 of the term-magnitude sum is treated as zero so the
    degenerate-case branches fire deterministically.
    """
    b0, b1, b2 = bx - ax, by - ay, bz - az
    c0, c1, c2 = cx - ax, cy - ay, cz - az
    d0, d1, d2 = dx - ax, dy - ay, dz - az
    det = (
        b0 * (c1 * d2 - c2 * d1)
        - b1 * (c0 * d2 - c2 * d0)
        + b2 * (c0 * d1 - c1 * d0)
    )
    mag = (
        abs(b0) * (abs(c1 * d2) + abs(c2 * d1))
        + abs(b1) * (abs(c0 * d2) + abs(c2 * d0))
        + abs(b2) * (abs(c0 * d1) + abs(c1 * d0))
    )
    if abs(det) <= 1e-12 * mag:
        return 0.0
    return det


@njit(cache=True, inline="always")
def _orient2d(ax, ay, bx, by, cx, cy):
    t1 = (bx - ax) * (cy - ay)
    t2 = (by - ay) * (cx - ax)
    det = t1 - t2
    if abs(det) <= 1e-12 * (abs(t1) + abs(t2)):
        return 0.0
    return det


@njit(cache=True)
def _seg_seg_2d(p0x, p0y, p1x, p1y, q0x, q0y, q1x, q1y):
    d1 = _orient2d(p0x, p0y, p1x, p1y, q0x, q0y)
    d2 = _orient2d(p0x, p0y, p1x, p1y, q1x, q1y)
    d3 = _orient2d(q0x, q0y, q1x, q1y, p0x, p0y)
    d4 = _orient2d(q0x, q0y, q1x, q1y, p1x, p1y)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    # collinear / endpoint touches
    if d1 == 0 and _on_seg(p0x, p0y, p1x, p1y, q0x, q0y):
        return True
    if d2 == 0 and _on_seg(p0x, p0y, p1x, p1y, q1x, q1y):
        return True
    if d3 == 0 and _on_seg(q0x, q0y, q1x, q1y, p0x, p0y):
        return True
    if d4 == 0 and _on_seg(q0x, q0y, q1x, q1y, p1x, p1y):
        return True
    return False


@njit(cache=True, inline="always")
def _on_seg(ax, ay, bx, by, px, py):
    return (
        min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)
    )


@njit(cache=True)
def _point_in_tri_2d(px, py, ax, ay, bx, by, cx, cy):
    d1 = _orient2d(ax, ay, bx, by, px, py)
    d2 = _orient2d(bx, by, cx, cy, px, py)
    d3 = _orient2d(cx, cy, ax, ay, px, py)
    has_neg = (d1 < 0) or (d2 < 0) or (d3 < 0)
    has_pos = (d1 > 0) or (d2 > 0) or (d3 > 0)
    return not (has_neg and has_pos)


@njit(cache=True)
def _seg_tri_coplanar_2d(a, b, u, v, w, ax0, ax1):
    # segment ab against triangle uvw projected to axes (ax0, ax1)
    if _seg_seg_2d(a[ax0], a[ax1], b[ax0], b[ax1], u[ax0], u[ax1], v[ax0], v[ax1]):
        return True
    if _seg_seg_2d(a[ax0], a[ax1], b[ax0], b[ax1], v[ax0], v[ax1], w[ax0], w[ax1]):
        return True
    if _seg_seg_2d(a[ax0], a[ax1], b[ax0], b[ax1], w[ax0], w[ax1], u[ax0], u[ax1]):
        return True
    if _point_in_tri_2d(a[ax0], a[ax1], u[ax0], u[ax1], v[ax0], v[ax1], w[ax0], w[ax1]):
        return True
    if _point_in_tri_2d(b[ax0], b[ax1], u[ax0], u[ax1], v[ax0], v[ax1], w[ax0], w[ax1]):
        return True
    return False


@njit(cache=True)
def _dominant_axes(u, v, w):
    nx = (v[1] - u[1]) * (w[2] - u[2]) - (v[2] - u[2]) * (w[1] - u[1])
    ny = (v[2] - u[2]) * (w[0] - u[0]) - (v[0] - u[0]) * (w[2] - u[2])
    nz = (v[0] - u[0]) * (w[1] - u[1]) - (v[1] - u[1]) * (w[0] - u[0])
    anx, any_, anz = abs(nx), abs(ny), abs(nz)
    if anx >= any_ and anx >= anz:
        return 1, 2
    if any_ >= anz:
        return 0, 2
    return 0, 1


@njit(cache=True)
def _seg_tri(a, b, u, v, w):
    """0 = disjoint, 1 = intersecting, 2 = segment coplanar with the triangle."""
    s1 = _orient3d(u[0], u[1], u[2], v[0], v[1], v[2], w[0], w[1], w[2], a[0], a[1], a[2])
    s2 = _orient3d(u[0], u[1], u[2], v[0], v[1], v[2], w[0], w[1], w[2], b[0], b[1], b[2])
    if s1 > 0 and s2 > 0:
        return 0
    if s1 < 0 and s2 < 0:
        return 0
    if s1 == 0 and s2 == 0:
        return 2
    # screw test: the crossing point is inside uvw iff the side of line ab is
    # consistent for all three triangle edges
    o1 = _orient3d(a[0], a[1], a[2], b[0], b[1], b[2], u[0], u[1], u[2], v[0], v[1], v[2])
    o2 = _orient3d(a[0], a[1], a[2], b[0], b[1], b[2], v[0], v[1], v[2], w[0], w[1], w[2])
    o3 = _orient3d(a[0], a[1], a[2], b[0], b[1], b[2], w[0], w[1], w[2], u[0], u[1], u[2])
    if o1 == 0 and o2 == 0 and o3 == 0:
        # the line through ab lies in the triangle's plane (s1/s2 were only
        # rounding dust): the screw test is vacuous, resolve in 2-D instead
        return 2
    if (o1 >= 0 and o2 >= 0 and o3 >= 0) or (o1 <= 0 and o2 <= 0 and o3 <= 0):
        return 1
    return 0


@njit(cache=True)
def tri_tri_intersect(p1, q1, r1, p2, q2, r2):
    """Exact yes/no intersection for two triangles given as 3-vectors."""
    coplanar = False
    r = _seg_tri(p1, q1, p2, q2, r2)
    if r == 1:
        return True
    coplanar |= r == 2
    r = _seg_tri(q1, r1, p2, q2, r2)
    if r == 1:
        return True
    coplanar |= r == 2
    r = _seg_tri(r1, p1, p2, q2, r2)
    if r == 1:
        return True
    coplanar |= r == 2
    r = _seg_tri(p2, q2, p1, q1, r1)
    if r == 1:
        return True
    coplanar |= r == 2
    r = _seg_tri(q2, r2, p1, q1, r1)
    if r == 1:
        return True
    coplanar |= r == 2
    r = _seg_tri(r2, p2, p1, q1, r1)
    if r == 1:
        return True
    coplanar |= r == 2
    if not coplanar:
        return False
    ax0, ax1 = _dominant_axes(p2, q2, r2)
    if _seg_tri_coplanar_2d(p1, q1, p2, q2, r2, ax0, ax1):
        return True
    if _seg_tri_coplanar_2d(q1, r1, p2, q2, r2, ax0, ax1):
        return True
    if _seg_tri_coplanar_2d(r1, p1, p2, q2, r2, ax0, ax1):
        return True
    ax0, ax1 = _dominant_axes(p1, q1, r1)
    if _seg_tri_coplanar_2d(p2, q2, p1, q1, r1, ax0, ax1):
        return True
    if _seg_tri_coplanar_2d(q2, r2, p1, q1, r1, ax0, ax1):
        return True
    if _seg_tri_coplanar_2d(r2, p2, p1, q1, r1, ax0, ax1):
        return True
    return False


@njit(cache=True, inline="always")
def _pair_hits(tv, tris, fa, fb):
    # shared vertex index -> legitimately touching neighbours, skip
    for x in range(3):
        for y in range(3):
            if tris[fa, x] == tris[fb, y]:
                return False
    # quick reject on axis-aligned boxes
    for ax in range(3):
        amin = min(tv[fa, ax], min(tv[fa, 3 + ax], tv[fa, 6 + ax]))
        amax = max(tv[fa, ax], max(tv[fa, 3 + ax], tv[fa, 6 + ax]))
        bmin = min(tv[fb, ax], min(tv[fb, 3 + ax], tv[fb, 6 + ax]))
        bmax = max(tv[fb, ax], max(tv[fb, 3 + ax], tv[fb, 6 + ax]))
        if amax < bmin or bmax < amin:
            return False
    return tri_tri_intersect(
        tv[fa, 0:3], tv[fa, 3:6], tv[fa, 6:9],
        tv[fb, 0:3], tv[fb, 3:6], tv[fb, 6:9],
    )


@njit(cache=True, parallel=True)
def _count_cell_hits(tv, tris, tri_lo, starts, counts, cell_tris, ncy, ncz, out):
    ncells = len(counts)
    for cell in prange(ncells):
        n = counts[cell]
        if n < 2:
            out[cell] = 0
            continue
        ck = cell % ncz
        cj = (cell // ncz) % ncy
        ci = cell // (ncz * ncy)
        s = starts[cell]
        hits = 0
        for a in range(n):
            fa = cell_tris[s + a]
            for b in range(a + 1, n):
                fb = cell_tris[s + b]
                # each pair is examined only in the lowest cell both boxes share
                oi = max(tri_lo[fa, 0], tri_lo[fb, 0])
                oj = max(tri_lo[fa, 1], tri_lo[fb, 1])
                ok = max(tri_lo[fa, 2], tri_lo[fb, 2])
                if oi != ci or oj != cj or ok != ck:
                    continue
                if _pair_hits(tv, tris, fa, fb):
                    hits += 1
        out[cell] = hits


@njit(cache=True)
def _collect_cell_hits(tv, tris, tri_lo, starts, counts, cell_tris, ncy, ncz,
                       cells, offs, out_pairs):
    for m in range(len(cells)):
        cell = cells[m]
        ck = cell % ncz
        cj = (cell // ncz) % ncy
        ci = cell // (ncz * ncy)
        s = starts[cell]
        n = counts[cell]
        w = offs[m]
        for a in range(n):
            fa = cell_tris[s + a]
            for b in range(a + 1, n):
                fb = cell_tris[s + b]
                oi = max(tri_lo[fa, 0], tri_lo[fb, 0])
                oj = max(tri_lo[fa, 1], tri_lo[fb, 1])
                ok = max(tri_lo[fa, 2], tri_lo[fb, 2])
                if oi != ci or oj != cj or ok != ck:
                    continue
                if _pair_hits(tv, tris, fa, fb):
                    if fa < fb:
                        out_pairs[w, 0] = fa
                        out_pairs[w, 1] = fb
                    else:
                        out_pairs[w, 0] = fb
                        out_pairs[w, 1] = fa
                    w += 1


def self_intersections(mesh):
    """Count intersecting triangle pairs; returns (count, pairs (K,2) int64).

    Pairs sharing a vertex index are excluded. Candidates come from a uniform
    grid over triangle bounding boxes; each candidate pair is tested exactly
    once (in the lowest grid cell both boxes cover).
    """
    v, t = mesh_arrays(mesh)
    if len(t) < 2:
        return 0, np.empty((0, 2), dtype=np.int64)
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    tv = np.concatenate([a, b, c], axis=1)

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
    while np.any(np.ceil(extent / cs) > _MAX_CELLS_PER_AXIS):
        cs *= 2.0
    eps = 1e-9 + 1e-9 * float(extent.max())
    origin = lo - eps
    nc = np.maximum(np.ceil((hi - origin + eps) / cs).astype(np.int64), 1)

    tmin = np.minimum(np.minimum(a, b), c)
    tmax = np.maximum(np.maximum(a, b), c)
    tri_lo = np.clip(((tmin - origin) / cs).astype(np.int64), 0, nc - 1)
    tri_hi = np.clip(((tmax - origin) / cs).astype(np.int64), 0, nc - 1)

    counts3 = np.zeros(tuple(nc), dtype=np.int64)
    sdfk.fill_cell_counts(tri_lo, tri_hi, counts3)
    counts = counts3.ravel()
    starts = np.zeros(counts.size, dtype=np.int64)
    np.cumsum(counts[:-1], out=starts[1:])
    cell_tris = np.empty(int(counts.sum()), dtype=np.int64)
    sdfk.fill_cell_tris(tri_lo, tri_hi, starts.copy(), cell_tris, int(nc[1]), int(nc[2]))

    hit_counts = np.empty(counts.size, dtype=np.int64)
    _count_cell_hits(tv, t, tri_lo, starts, counts, cell_tris,
                     int(nc[1]), int(nc[2]), hit_counts)
    total = int(hit_counts.sum())
    if total == 0:
        return 0, np.empty((0, 2), dtype=np.int64)
    cells = np.nonzero(hit_counts)[0].astype(np.int64)
    offs = np.zeros(len(cells), dtype=np.int64)
    np.cumsum(hit_counts[cells][:-1], out=offs[1:])
    pairs = np.empty((total, 2), dtype=np.int64)
    _collect_cell_hits(tv, t, tri_lo, starts, counts, cell_tris,
                       int(nc[1]), int(nc[2]), cells, offs, pairs)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return total, pairs[order]


def self_intersections_bruteforce(mesh):
    """All-pairs oracle with the same elementary test; for small meshes."""
    v, t = mesh_arrays(mesh)
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    tv = np.concatenate([a, b, c], axis=1)
    found = []
    for fa in range(len(t)):
        for fb in range(fa + 1, len(t)):
            if set(t[fa]) & set(t[fb]):
                continue
            if tri_tri_intersect(tv[fa, 0:3], tv[fa, 3:6], tv[fa, 6:9],
                                 tv[fb, 0:3], tv[fb, 3:6], tv[fb, 6:9]):
                found.append((fa, fb))
    return len(found), np.array(found, dtype=np.int64).reshape(-1, 2)
