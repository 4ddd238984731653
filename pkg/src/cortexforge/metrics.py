"""Surface- and scalar-comparison metrics.

Mesh distances come in two flavours: point-to-surface (default, exact
point-to-triangle via the accelerated index) and vertex-to-vertex (literal
nearest-vertex, KD-tree). Percentiles interpolate linearly between order
statistics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import UsageError
from .sdf.index import SurfaceIndex, mesh_arrays

_MODES = ("surface", "vertex")


@dataclass(frozen=True)
class MeasurementSeries:
    """Paired scalar measurements (x_i, y_i), optionally named per pair."""

    x: np.ndarray
    y: np.ndarray
    names: Optional[tuple] = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 1 or x.shape != y.shape:
            raise UsageError("series must be two equal-length 1-D arrays")
        if len(x) < 2:
            raise UsageError("series needs at least 2 pairs")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise UsageError("series values must be finite")
        if self.names is not None and len(self.names) != len(x):
            raise UsageError("names must align with the series")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.x)


@dataclass(frozen=True)
class PearsonResult:
    r: float
    ci_lo: float
    ci_hi: float
    n: int
    significant: bool


def directed_distances(mesh_from, mesh_to, mode: str = "surface") -> np.ndarray:
    """Distance from each vertex of mesh_from to mesh_to, in mm."""
    if mode not in _MODES:
        raise UsageError(f"mode must be one of {_MODES}, got {mode!r}")
    va, _ = mesh_arrays(mesh_from)
    vb, tb = mesh_arrays(mesh_to)
    if len(va) == 0 or len(vb) == 0:
        raise UsageError("cannot measure distances against an empty mesh")
    if mode == "vertex":
        return cKDTree(vb).query(va)[0]
    return SurfaceIndex(mesh_to).unsigned_distance(va)


def _pooled(mesh_a, mesh_b, mode):
    return np.concatenate(
        [directed_distances(mesh_a, mesh_b, mode), directed_distances(mesh_b, mesh_a, mode)]
    )


def asd(mesh_a, mesh_b, mode: str = "surface") -> float:
    """Average symmetric distance: mean of the two directed means."""
    d_ab = directed_distances(mesh_a, mesh_b, mode)
    d_ba = directed_distances(mesh_b, mesh_a, mode)
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def percentile(values, q: float) -> float:
    """Linear-interpolation percentile of a 1-D sample."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise UsageError("percentile of an empty sample")
    return float(np.percentile(vals, q, method="linear"))


def hd90(mesh_a, mesh_b, mode: str = "surface") -> float:
    """90th percentile of the pooled directed-distance samples."""
    return percentile(_pooled(mesh_a, mesh_b, mode), 90.0)


def hd100(mesh_a, mesh_b, mode: str = "surface") -> float:
    """Maximum of the pooled directed-distance samples (classic Hausdorff)."""
    return float(_pooled(mesh_a, mesh_b, mode).max())


def surface_distance_report(mesh_a, mesh_b, mode: str = "surface") -> dict:
    d_ab = directed_distances(mesh_a, mesh_b, mode)
    d_ba = directed_distances(mesh_b, mesh_a, mode)
    pooled = np.concatenate([d_ab, d_ba])
    return {
        "asd_mm": 0.5 * (float(d_ab.mean()) + float(d_ba.mean())),
        "hd90_mm": percentile(pooled, 90.0),
        "hd100_mm": float(pooled.max()),
    }


def dice_label(labels_a, labels_b, label) -> float:
    """Dice overlap of one label over a shared vertex index set.

    NaN when the label is absent from both arrays: overlap of nothing with
    nothing is undefined, not zero.
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise UsageError("label arrays must be equal-length 1-D")
    in_a = a == label
    in_b = b == label
    denom = int(in_a.sum()) + int(in_b.sum())
    if denom == 0:
        return float("nan")
    return 2.0 * int((in_a & in_b).sum()) / denom


def dice(labels_a, labels_b) -> dict:
    """Per-label Dice over the union of labels present in either array."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise UsageError("label arrays must be equal-length 1-D")
    present = np.union1d(np.unique(a), np.unique(b))
    return {int(l): dice_label(a, b, l) for l in present}


def dice_macro(labels_a, labels_b) -> float:
    values = list(dice(labels_a, labels_b).values())
    return float(np.mean(values))


def pearson(x, y=None) -> PearsonResult:
    """Correlation coefficient with a Fisher-transform 95% interval.

    The interval is z +- 1.96/sqrt(n-3) mapped back through tanh; the
    significance flag (alpha = 0.05) reports whether it excludes zero.
    """
    if y is None:
        if not isinstance(x, MeasurementSeries):
            raise UsageError("pearson needs two arrays or a MeasurementSeries")
        x, y = x.x, x.y
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise UsageError("series must be two equal-length 1-D arrays")
    n = len(xv)
    if n < 3:
        raise UsageError("correlation interval needs n >= 3")
    dx = xv - xv.mean()
    dy = yv - yv.mean()
    sx = float(np.sqrt((dx * dx).sum()))
    sy = float(np.sqrt((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        raise UsageError("correlation undefined: a series has zero variance")
    r = float((dx * dy).sum() / (sx * sy))
    r = min(1.0, max(-1.0, r))
    if abs(r) == 1.0:
        lo = hi = r  # Fisher z diverges; the interval degenerates
    else:
        z = np.arctanh(r)
        half = 1.96 / np.sqrt(n - 3)
        lo, hi = float(np.tanh(z - half)), float(np.tanh(z + half))
    return PearsonResult(r, lo, hi, n, significant=bool(lo > 0.0 or hi < 0.0))


def abs_pct_error(reference: float, estimate: float) -> float:
    """100 * |estimate - reference| / |reference|."""
    if reference == 0:
        raise UsageError("percentage error undefined for zero reference")
    return 100.0 * abs(estimate - reference) / abs(reference)
