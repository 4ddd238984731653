"""Surface-based morphometry: area, enclosed volume, thickness, parcel tables.

All reductions accumulate in float64 over arrays in their natural storage
order, so repeated runs and thread counts cannot reorder the sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, TopologyError, UsageError
from .sdf.index import SurfaceIndex, edge_counts, mesh_arrays

WHOLE = "whole-hemisphere"


@dataclass(frozen=True)
class MorphometryRecord:
    """One table row: a named region with its aggregate measures.

    mean_thickness_mm is NaN when the region has no vertices; consumers
    should branch on thickness_defined rather than testing the NaN.
    """

    region: str
    surface_area_mm2: float
    gm_volume_mm3: float
    mean_thickness_mm: float
    vertex_count: int

    @property
    def thickness_defined(self) -> bool:
        return self.vertex_count > 0


def triangle_areas(mesh) -> np.ndarray:
    v, t = mesh_arrays(mesh)
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def surface_area(mesh) -> float:
    """Total area in mm^2: sum of triangle cross-product magnitudes over 2."""
    return float(np.sum(triangle_areas(mesh), dtype=np.float64))


def vertex_area_weights(mesh) -> np.ndarray:
    """Per-vertex area shares: each triangle splits equally among its corners.

    Shares sum exactly to surface_area(mesh).
    """
    v, t = mesh_arrays(mesh)
    shares = np.repeat(triangle_areas(mesh) / 3.0, 3)
    return np.bincount(t.ravel(), weights=shares, minlength=len(v))


def _require_closed(mesh, what: str) -> None:
    v, t = mesh_arrays(mesh)
    if len(t) == 0:
        raise UsageError(f"{what}: mesh has no triangles")
    _, counts, _ = edge_counts(t, len(v))
    bad = int((counts != 2).sum())
    if bad:
        raise TopologyError(f"{what}: mesh is not closed ({bad} irregular edges)")


def _flux(v: np.ndarray, t: np.ndarray) -> np.ndarray:
    # det(v0, v1, v2)/6 per triangle; sums to the enclosed signed volume
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0


def _triangle_flux(mesh) -> np.ndarray:
    v, t = mesh_arrays(mesh)
    return _flux(v, t)


def enclosed_volume(mesh) -> float:
    """Signed volume in mm^3 by the divergence theorem; positive if outward."""
    _require_closed(mesh, "enclosed_volume")
    return float(np.sum(_triangle_flux(mesh), dtype=np.float64))


def gray_matter_volume(white, pial) -> float:
    """Volume of the shell between the white and pial surfaces.

    A negative difference means the surfaces cross, which the expansion
    constraint is supposed to rule out, so it is reported as an error
    rather than clamped.
    """
    gm = enclosed_volume(pial) - enclosed_volume(white)
    if gm < 0:
        raise GeometryError(
            f"pial volume is smaller than white volume (difference {gm:.3f} mm^3); "
            "the surfaces cross"
        )
    return gm


def cortical_thickness(white, pial) -> np.ndarray:
    """Per-vertex thickness on the white mesh, in mm.

    Averages the two directed point-to-surface distances: white vertex k to
    the pial surface, and pial vertex k (its expansion counterpart) to the
    white surface. Requires the one-to-one correspondence that expand_pial
    preserves.
    """
    vw, _ = mesh_arrays(white)
    vp, _ = mesh_arrays(pial)
    if len(vw) != len(vp):
        raise UsageError(
            f"white and pial meshes must share vertex correspondence "
            f"({len(vw)} vs {len(vp)} vertices)"
        )
    d_wp = SurfaceIndex(pial).unsigned_distance(vw)
    d_pw = SurfaceIndex(white).unsigned_distance(vp)
    return 0.5 * (d_wp + d_pw)


def _majority_label(tri_labels: np.ndarray) -> np.ndarray:
    """Per-triangle label: the value held by >=2 corners, else the smallest."""
    a, b, c = tri_labels[:, 0], tri_labels[:, 1], tri_labels[:, 2]
    out = np.minimum(np.minimum(a, b), c)
    out = np.where(b == c, b, out)
    out = np.where(a == c, a, out)
    out = np.where(a == b, a, out)
    return out


def aggregate_by_parcel(values, labels, white, pial, grouping=None,
                        area_weights=None):
    """Regional records from per-vertex values and integer labels.

    grouping maps label -> region name; every label present must appear in it
    (pass None to name regions by their integer label). Region area sums
    vertex area shares; region volume assigns each triangle's white-to-pial
    prism flux to the majority label of its corners; thickness is the
    area-weighted mean of values. Records come back sorted by region name,
    including rows for grouping entries with no vertices.
    """
    vals = np.asarray(values, dtype=np.float64)
    labs = np.asarray(labels)
    if labs.dtype.kind not in "iu":
        raise UsageError("labels must be integers")
    vw, tw = mesh_arrays(white)
    vp, _ = mesh_arrays(pial)
    if not (len(vals) == len(labs) == len(vw) == len(vp)):
        raise UsageError("values, labels, and white/pial vertices must align")

    present = np.unique(labs)
    if grouping is None:
        grouping = {int(l): str(int(l)) for l in present}
    missing = [int(l) for l in present if int(l) not in grouping]
    if missing:
        raise UsageError(f"labels missing from grouping table: {missing}")

    if area_weights is None:
        area_weights = vertex_area_weights(white)
    weights = np.asarray(area_weights, dtype=np.float64)

    flux = _flux(vp, tw) - _flux(vw, tw)
    tri_lab = _majority_label(labs[tw])

    records = []
    for lab, region in sorted(grouping.items(), key=lambda kv: kv[1]):
        sel = labs == lab
        n = int(sel.sum())
        area = float(weights[sel].sum())
        vol = float(flux[tri_lab == lab].sum())
        thick = float((vals[sel] * weights[sel]).sum() / weights[sel].sum()) if n else float("nan")
        records.append(MorphometryRecord(region, area, vol, thick, n))
    return records


def morphometry_table(white, pial, labels=None, grouping=None):
    """Whole-hemisphere record first, then per-region records when labeled."""
    thickness = cortical_thickness(white, pial)
    weights = vertex_area_weights(white)
    whole = MorphometryRecord(
        WHOLE,
        surface_area(white),
        gray_matter_volume(white, pial),
        float((thickness * weights).sum() / weights.sum()),
        white.n_vertices,
    )
    if labels is None:
        return [whole]
    return [whole] + aggregate_by_parcel(
        thickness, labels, white, pial, grouping, area_weights=weights
    )


def write_morphometry_csv(path, records) -> None:
    lines = ["region,area_mm2,volume_mm3,thickness_mm,nvertices"]
    for r in records:
        thick = f"{r.mean_thickness_mm:.17g}" if r.thickness_defined else "nan"
        lines.append(
            f"{r.region},{r.surface_area_mm2:.17g},{r.gm_volume_mm3:.17g},"
            f"{thick},{r.vertex_count}"
        )
    with open(str(path), "wt") as fh:
        fh.write("\n".join(lines) + "\n")
