"""Numba kernels: exact point-triangle distance and uniform-grid queries.

All loops parallelize over query points with disjoint writes only, so results
are bit-identical for any thread count. Triangles are packed as (F, 9) float64
rows (ax ay az bx by bz cx cy cz) to keep the inner loop free of indirection.

Feature codes returned by the closest-point routine:
    0, 1, 2   vertex A / B / C
    3, 4, 5   edge AB / BC / CA
    6         triangle interior
"""

import numpy as np
from numba import njit, prange

FAR_TRI = -1


@njit(cache=True, fastmath=False)
def closest_point_on_triangle(px, py, pz, tpack, f):
    """Ericson's region-based closest point. Returns (d2, qx, qy, qz, feature)."""
    ax = tpack[f, 0]; ay = tpack[f, 1]; az = tpack[f, 2]
    bx = tpack[f, 3]; by = tpack[f, 4]; bz = tpack[f, 5]
    cx = tpack[f, 6]; cy = tpack[f, 7]; cz = tpack[f, 8]

    abx = bx - ax; aby = by - ay; abz = bz - az
    acx = cx - ax; acy = cy - ay; acz = cz - az
    apx = px - ax; apy = py - ay; apz = pz - az

    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        qx = ax; qy = ay; qz = az; feat = 0
    else:
        bpx = px - bx; bpy = py - by; bpz = pz - bz
        d3 = abx * bpx + aby * bpy + abz * bpz
        d4 = acx * bpx + acy * bpy + acz * bpz
        if d3 >= 0.0 and d4 <= d3:
            qx = bx; qy = by; qz = bz; feat = 1
        else:
            vc = d1 * d4 - d3 * d2
            if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
                v = d1 / (d1 - d3)
                qx = ax + v * abx; qy = ay + v * aby; qz = az + v * abz
                feat = 3
            else:
                cpx = px - cx; cpy = py - cy; cpz = pz - cz
                d5 = abx * cpx + aby * cpy + abz * cpz
                d6 = acx * cpx + acy * cpy + acz * cpz
                if d6 >= 0.0 and d5 <= d6:
                    qx = cx; qy = cy; qz = cz; feat = 2
                else:
                    vb = d5 * d2 - d1 * d6
                    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
                        w = d2 / (d2 - d6)
                        qx = ax + w * acx; qy = ay + w * acy; qz = az + w * acz
                        feat = 5
                    else:
                        va = d3 * d6 - d5 * d4
                        if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
                            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                            qx = bx + w * (cx - bx)
                            qy = by + w * (cy - by)
                            qz = bz + w * (cz - bz)
                            feat = 4
                        else:
                            denom = 1.0 / (va + vb + vc)
                            v = vb * denom
                            w = vc * denom
                            qx = ax + abx * v + acx * w
                            qy = ay + aby * v + acy * w
                            qz = az + abz * v + acz * w
                            feat = 6
    dx = px - qx; dy = py - qy; dz = pz - qz
    return dx * dx + dy * dy + dz * dz, qx, qy, qz, feat


@njit(cache=True)
def fill_cell_counts(tri_lo, tri_hi, counts):
    for f in range(tri_lo.shape[0]):
        for i in range(tri_lo[f, 0], tri_hi[f, 0] + 1):
            for j in range(tri_lo[f, 1], tri_hi[f, 1] + 1):
                for k in range(tri_lo[f, 2], tri_hi[f, 2] + 1):
                    counts[i, j, k] += 1


@njit(cache=True)
def fill_cell_tris(tri_lo, tri_hi, cursor, cell_tris, ncy, ncz):
    # ascending triangle id within each cell: deterministic tie-breaking later
    for f in range(tri_lo.shape[0]):
        for i in range(tri_lo[f, 0], tri_hi[f, 0] + 1):
            for j in range(tri_lo[f, 1], tri_hi[f, 1] + 1):
                for k in range(tri_lo[f, 2], tri_hi[f, 2] + 1):
                    flat = (i * ncy + j) * ncz + k
                    cell_tris[cursor[flat]] = f
                    cursor[flat] += 1


@njit(cache=True, inline="always")
def _cell_box_d2(px, py, pz, ox, oy, oz, cs, i, j, k):
    lox = ox + i * cs; hix = lox + cs
    loy = oy + j * cs; hiy = loy + cs
    loz = oz + k * cs; hiz = loz + cs
    dx = max(max(lox - px, px - hix), 0.0)
    dy = max(max(loy - py, py - hiy), 0.0)
    dz = max(max(loz - pz, pz - hiz), 0.0)
    return dx * dx + dy * dy + dz * dz


@njit(cache=True, inline="always")
def _scan_cell(px, py, pz, ii, jj, kk, ox, oy, oz, cs, ncy, ncz,
               starts, counts, cell_tris, tpack, limit2,
               best_d2, best_t, best_qx, best_qy, best_qz, best_feat):
    flat = (ii * ncy + jj) * ncz + kk
    n_in_cell = counts[flat]
    if n_in_cell == 0:
        return best_d2, best_t, best_qx, best_qy, best_qz, best_feat
    box_d2 = _cell_box_d2(px, py, pz, ox, oy, oz, cs, ii, jj, kk)
    if box_d2 >= best_d2 or box_d2 > limit2:
        return best_d2, best_t, best_qx, best_qy, best_qz, best_feat
    s = starts[flat]
    for m in range(n_in_cell):
        f = cell_tris[s + m]
        d2, qx, qy, qz, feat = closest_point_on_triangle(px, py, pz, tpack, f)
        if d2 < best_d2:
            best_d2 = d2; best_t = f
            best_qx = qx; best_qy = qy; best_qz = qz; best_feat = feat
    return best_d2, best_t, best_qx, best_qy, best_qz, best_feat


@njit(cache=True, parallel=True, fastmath=False)
def query_points(points, tpack, ox, oy, oz, cs, ncx, ncy, ncz,
                 starts, counts, cell_tris, cell_hint, clip_limit,
                 out_dist, out_tri, out_q, out_feat):
    """Nearest-triangle query with expanding Chebyshev rings.

    cell_hint holds, per cell, the distance (in cells) to the nearest occupied
    cell; the ring sweep starts just inside it. Queries whose lower bound
    exceeds clip_limit return (clip_limit, FAR_TRI).
    """
    limit2 = clip_limit * clip_limit
    hx = ox + ncx * cs
    hy = oy + ncy * cs
    hz = oz + ncz * cs
    rmax = ncx + ncy + ncz

    for n in prange(points.shape[0]):
        px = points[n, 0]; py = points[n, 1]; pz = points[n, 2]

        gx = max(max(ox - px, px - hx), 0.0)
        gy = max(max(oy - py, py - hy), 0.0)
        gz = max(max(oz - pz, pz - hz), 0.0)
        gap2 = gx * gx + gy * gy + gz * gz

        ci = int(np.floor((px - ox) / cs))
        cj = int(np.floor((py - oy) / cs))
        ck = int(np.floor((pz - oz) / cs))
        if ci < 0: ci = 0
        if ci > ncx - 1: ci = ncx - 1
        if cj < 0: cj = 0
        if cj > ncy - 1: cj = ncy - 1
        if ck < 0: ck = 0
        if ck > ncz - 1: ck = ncz - 1

        best_d2 = np.inf
        best_t = FAR_TRI
        best_qx = px; best_qy = py; best_qz = pz
        best_feat = 0

        r = int(cell_hint[(ci * ncy + cj) * ncz + ck]) - 1
        if r < 0:
            r = 0
        while r <= rmax:
            lb = (r - 1) * cs
            if lb < 0.0:
                lb = 0.0
            lb2 = lb * lb
            if gap2 > lb2:
                lb2 = gap2
            if lb2 >= best_d2:
                break
            if best_t == FAR_TRI and lb2 > limit2:
                break

            ilo = ci - r; ihi = ci + r
            jlo = cj - r; jhi = cj + r
            klo = ck - r; khi = ck + r
            if r == 0:
                best_d2, best_t, best_qx, best_qy, best_qz, best_feat = _scan_cell(
                    px, py, pz, ci, cj, ck, ox, oy, oz, cs, ncy, ncz,
                    starts, counts, cell_tris, tpack, limit2,
                    best_d2, best_t, best_qx, best_qy, best_qz, best_feat)
            else:
                # two k-faces of the ring cube
                for kk in (klo, khi):
                    if kk < 0 or kk >= ncz:
                        continue
                    for ii in range(max(ilo, 0), min(ihi, ncx - 1) + 1):
                        for jj in range(max(jlo, 0), min(jhi, ncy - 1) + 1):
                            best_d2, best_t, best_qx, best_qy, best_qz, best_feat = _scan_cell(
                                px, py, pz, ii, jj, kk, ox, oy, oz, cs, ncy, ncz,
                                starts, counts, cell_tris, tpack, limit2,
                                best_d2, best_t, best_qx, best_qy, best_qz, best_feat)
                # two j-faces, k interior
                for jj in (jlo, jhi):
                    if jj < 0 or jj >= ncy:
                        continue
                    for ii in range(max(ilo, 0), min(ihi, ncx - 1) + 1):
                        for kk in range(max(klo + 1, 0), min(khi - 1, ncz - 1) + 1):
                            best_d2, best_t, best_qx, best_qy, best_qz, best_feat = _scan_cell(
                                px, py, pz, ii, jj, kk, ox, oy, oz, cs, ncy, ncz,
                                starts, counts, cell_tris, tpack, limit2,
                                best_d2, best_t, best_qx, best_qy, best_qz, best_feat)
                # two i-faces, j and k interior
                for ii in (ilo, ihi):
                    if ii < 0 or ii >= ncx:
                        continue
                    for jj in range(max(jlo + 1, 0), min(jhi - 1, ncy - 1) + 1):
                        for kk in range(max(klo + 1, 0), min(khi - 1, ncz - 1) + 1):
                            best_d2, best_t, best_qx, best_qy, best_qz, best_feat = _scan_cell(
                                px, py, pz, ii, jj, kk, ox, oy, oz, cs, ncy, ncz,
                                starts, counts, cell_tris, tpack, limit2,
                                best_d2, best_t, best_qx, best_qy, best_qz, best_feat)
            r += 1

        if best_t == FAR_TRI or best_d2 > limit2:
            out_dist[n] = clip_limit
            out_tri[n] = FAR_TRI
            out_q[n, 0] = px; out_q[n, 1] = py; out_q[n, 2] = pz
            out_feat[n] = 0
        else:
            out_dist[n] = np.sqrt(best_d2)
            out_tri[n] = best_t
            out_q[n, 0] = best_qx; out_q[n, 1] = best_qy; out_q[n, 2] = best_qz
            out_feat[n] = best_feat


@njit(cache=True, parallel=True, fastmath=False)
def pseudo_normal_signs(points, qpts, feats, tids, tris,
                        face_normals, edge_normals, vertex_normals, out_sign):
    """Sign of (p - closest_point) . pseudo-normal(closest feature); far -> +1."""
    for n in prange(points.shape[0]):
        t = tids[n]
        if t < 0:
            out_sign[n] = 1.0
            continue
        f = feats[n]
        if f == 6:
            nx = face_normals[t, 0]; ny = face_normals[t, 1]; nz = face_normals[t, 2]
        elif f >= 3:
            e = f - 3
            nx = edge_normals[t, e, 0]; ny = edge_normals[t, e, 1]; nz = edge_normals[t, e, 2]
        else:
            v = tris[t, f]
            nx = vertex_normals[v, 0]; ny = vertex_normals[v, 1]; nz = vertex_normals[v, 2]
        dx = points[n, 0] - qpts[n, 0]
        dy = points[n, 1] - qpts[n, 1]
        dz = points[n, 2] - qpts[n, 2]
        s = dx * nx + dy * ny + dz * nz
        out_sign[n] = -1.0 if s < 0.0 else 1.0
