"""Vertex labels: region tables, lobe grouping, nearest-vertex label transfer.

Label transfer stands in for spherical registration: target vertices copy the
label of their nearest source vertex, with the match distance returned for
quality control.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.spatial import cKDTree

from .errors import InputFormatError, UsageError
from .sdf.index import mesh_arrays

# lobe identifiers live outside the region-id range so that grouping an
# already-grouped array is a no-op
UNKNOWN = 0
LOBE_IDS = {
    "unknown": UNKNOWN,
    "frontal": 101,
    "parietal": 102,
    "occipital": 103,
    "temporal": 104,
    "cingulate-insula": 105,
}
LOBE_NAMES = {v: k for k, v in LOBE_IDS.items()}


@dataclass(frozen=True)
class LabelTable:
    """Integer region label -> (name, lobe)."""

    regions: dict

    def __post_init__(self):
        clean = {}
        names = set()
        for label, entry in self.regions.items():
            lab = int(label)
            name = str(entry["name"])
            lobe = str(entry["lobe"])
            if lobe not in LOBE_IDS:
                raise InputFormatError(
                    f"region {name!r}: unknown lobe {lobe!r} "
                    f"(expected one of {sorted(LOBE_IDS)})"
                )
            if lab in clean or name in names:
                raise InputFormatError(f"duplicate region id or name: {lab} {name!r}")
            names.add(name)
            clean[lab] = {"name": name, "lobe": lobe}
        object.__setattr__(self, "regions", clean)

    @classmethod
    def from_json(cls, path) -> "LabelTable":
        try:
            with open(str(path)) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputFormatError(f"{path}: cannot read label table: {exc}") from exc
        if "regions" not in doc:
            raise InputFormatError(f"{path}: missing 'regions' key")
        return cls(doc["regions"])

    @classmethod
    def default(cls) -> "LabelTable":
        """The 34 Desikan-Killiany regions with their lobe assignment."""
        text = resources.files("cortexforge.data").joinpath("dk_lobes.json").read_text()
        return cls(json.loads(text)["regions"])

    def name(self, label: int) -> str:
        entry = self.regions.get(int(label))
        return entry["name"] if entry else "unknown"

    def lobe(self, label: int) -> str:
        lab = int(label)
        if lab in LOBE_NAMES:
            return LOBE_NAMES[lab]
        entry = self.regions.get(lab)
        return entry["lobe"] if entry else "unknown"

    def labels(self):
        return sorted(self.regions)

    def region_grouping(self) -> dict:
        """label -> region name, for per-region morphometry tables."""
        return {lab: entry["name"] for lab, entry in self.regions.items()}

    def lobe_grouping(self) -> dict:
        """lobe id -> lobe name, for per-lobe morphometry tables."""
        return dict(LOBE_NAMES)


def read_labels(path, n_vertices=None) -> np.ndarray:
    """Read a "vertex,label" CSV into a dense per-vertex int array.

    Rows may arrive in any order.  With n_vertices given, every vertex must
    appear exactly once and indices must be in range; errors name the line.
    """
    pairs = []
    try:
        fh = open(str(path))
    except OSError as exc:
        raise InputFormatError(f"{path}: {exc.strerror or exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if lineno == 1 and line.lower().replace(" ", "") == "vertex,label":
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise InputFormatError(
                    f"{path}, line {lineno}: expected 'vertex,label', got {line!r}"
                )
            try:
                vertex, label = int(parts[0]), int(parts[1])
            except ValueError:
                raise InputFormatError(
                    f"{path}, line {lineno}: non-integer field in {line!r}"
                ) from None
            if vertex < 0 or (n_vertices is not None and vertex >= n_vertices):
                raise InputFormatError(
                    f"{path}, line {lineno}: vertex index {vertex} out of range"
                )
            pairs.append((lineno, vertex, label))
    n = n_vertices if n_vertices is not None else (
        1 + max((v for _, v, _ in pairs), default=-1)
    )
    out = np.full(n, UNKNOWN, dtype=np.int64)
    seen = np.zeros(n, dtype=bool)
    for lineno, vertex, label in pairs:
        if seen[vertex]:
            raise InputFormatError(
                f"{path}, line {lineno}: vertex {vertex} labeled twice"
            )
        seen[vertex] = True
        out[vertex] = label
    if n_vertices is not None and not seen.all():
        missing = int(np.flatnonzero(~seen)[0])
        raise InputFormatError(
            f"{path}: no label for vertex {missing} ({int((~seen).sum())} missing)"
        )
    return out


def write_labels(path, labels) -> None:
    labs = np.asarray(labels)
    if labs.dtype.kind not in "iu" or labs.ndim != 1:
        raise UsageError("labels must be a 1-D integer array")
    lines = ["vertex,label"]
    lines += [f"{i},{int(lab)}" for i, lab in enumerate(labs)]
    with open(str(path), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def transfer_labels(source_mesh, source_labels, target_mesh):
    """Copy each target vertex's label from its nearest source vertex.

    Returns (labels, distances); the distances tell how far each match was,
    so misalignment shows up as large values rather than silent mislabels.
    """
    sv, _ = mesh_arrays(source_mesh)
    tv, _ = mesh_arrays(target_mesh)
    labels = np.asarray(source_labels)
    if labels.ndim != 1 or len(labels) != len(sv):
        raise UsageError("source labels must align with source vertices")
    if len(sv) == 0:
        raise UsageError("cannot transfer labels from an empty mesh")
    dist, idx = cKDTree(sv).query(tv)
    return labels[idx], dist


def group_to_lobes(labels, table: LabelTable):
    """Map region labels to lobe ids; already-grouped ids pass through.

    Returns (lobe_labels, unknown_count): labels in neither the table nor the
    lobe id set become UNKNOWN and are tallied, not fatal.  The count is the
    number of UNKNOWN vertices in the output, so regrouping reports the same.
    """
    labs = np.asarray(labels)
    if labs.dtype.kind not in "iu":
        raise UsageError("labels must be integers")
    out = np.full(labs.shape, UNKNOWN, dtype=np.int64)
    for lobe_id in LOBE_NAMES:
        out[labs == lobe_id] = lobe_id
    for lab, entry in table.regions.items():
        out[labs == lab] = LOBE_IDS[entry["lobe"]]
    return out, int((out == UNKNOWN).sum())
