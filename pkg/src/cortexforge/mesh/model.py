"""Triangle mesh data model, OFF file io, per-vertex overlay CSV, topology."""

from __future__ import annotations

import gzip
import io
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..errors import InputFormatError, UsageError
from ..sdf.index import edge_counts, mesh_arrays


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle surface in world millimeters.

    Triangles are counterclockwise when viewed from outside the surface.
    Arrays are copied and frozen so meshes can be shared safely.
    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64, order="C", copy=True)
        t = np.array(self.triangles, dtype=np.int64, order="C", copy=True)
        if v.ndim != 2 or v.shape[1] != 3:
            raise UsageError(f"vertices must be (V, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise UsageError(f"triangles must be (F, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise UsageError("triangle indices out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def with_vertices(self, vertices: np.ndarray) -> "TriangleMesh":
        """Same connectivity, new vertex positions."""
        if np.asarray(vertices).shape != self.vertices.shape:
            raise UsageError("vertex array shape must be preserved")
        return TriangleMesh(vertices, self.triangles)

    def transformed(self, matrix: np.ndarray) -> "TriangleMesh":
        """Apply a 4x4 (or 3x4) affine to the vertices."""
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape not in ((4, 4), (3, 4)):
            raise UsageError("expected a 4x4 or 3x4 matrix")
        v = self.vertices @ m[:3, :3].T + m[:3, 3]
        t = self.triangles
        if m.shape == (4, 4) and np.linalg.det(m[:3, :3]) < 0:
            t = t[:, ::-1]  # keep outward orientation under reflections
        return TriangleMesh(v, t)


@dataclass(frozen=True)
class TopologyReport:
    """Exact combinatorial summary of a triangle mesh."""

    n_vertices: int
    n_edges: int
    n_triangles: int
    euler: int
    genus: float
    n_components: int
    n_boundary_edges: int
    n_nonmanifold_edges: int
    n_self_intersections: Optional[int] = None

    @property
    def closed_manifold(self) -> bool:
        return self.n_boundary_edges == 0 and self.n_nonmanifold_edges == 0

    def __str__(self) -> str:
        si = (
            "not counted"
            if self.n_self_intersections is None
            else str(self.n_self_intersections)
        )
        return (
            f"V={self.n_vertices} E={self.n_edges} F={self.n_triangles} "
            f"euler={self.euler} genus={self.genus:g} components={self.n_components} "
            f"boundary_edges={self.n_boundary_edges} "
            f"nonmanifold_edges={self.n_nonmanifold_edges} self_intersections={si}"
        )


def topology_report(mesh, count_self_intersections: bool = False) -> TopologyReport:
    """V/E/F counts, Euler characteristic, genus, component count.

    Self-intersections are only counted on request (they need the full
    geometric test); the field stays None otherwise.
    """
    v, t = mesh_arrays(mesh)
    nv, nf = len(v), len(t)
    if nf == 0:
        return TopologyReport(nv, 0, 0, nv, (2 - nv) / 2, 0, 0, 0,
                              0 if count_self_intersections else None)
    edges, counts, _ = edge_counts(t, nv)
    ne = len(edges)
    referenced = np.unique(t)
    euler = nv - ne + nf
    genus = (2 - euler) / 2

    graph = coo_matrix(
        (np.ones(ne), (edges[:, 0], edges[:, 1])), shape=(nv, nv)
    )
    # components counted over vertices that triangles actually use
    _, labels = connected_components(graph, directed=False)
    ncomp = int(len(np.unique(labels[referenced])))

    n_si = None
    if count_self_intersections:
        from .intersect import self_intersections

        n_si = self_intersections(TriangleMesh(v, t))[0]
    return TopologyReport(
        n_vertices=nv,
        n_edges=ne,
        n_triangles=nf,
        euler=euler,
        genus=genus,
        n_components=ncomp,
        n_boundary_edges=int(np.sum(counts == 1)),
        n_nonmanifold_edges=int(np.sum(counts > 2)),
        n_self_intersections=n_si,
    )


def vertex_adjacency(mesh) -> "coo_matrix":
    """Symmetric 0/1 vertex adjacency from the triangle edges (CSR)."""
    v, t = mesh_arrays(mesh)
    edges, _, _ = edge_counts(t, len(v))
    i = np.concatenate([edges[:, 0], edges[:, 1]])
    j = np.concatenate([edges[:, 1], edges[:, 0]])
    return coo_matrix((np.ones(len(i)), (i, j)), shape=(len(v), len(v))).tocsr()


# --- OFF files -------------------------------------------------------------


def _open_text(path, mode):
    path = str(path)
    if mode == "rb" or mode == "r":
        with open(path, "rb") as fh:
            head = fh.read(2)
        if head == b"\x1f\x8b":
            return gzip.open(path, "rt")
        return open(path, "rt")
    return open(path, "wt")


def _write_text(path, text: str) -> None:
    path = str(path)
    data = text.encode("ascii")
    if path.endswith(".gz"):
        # fixed mtime and empty name keep repeated writes byte-identical
        buf = io.BytesIO()
        with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as gz:
            gz.write(data)
        data = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(data)


def write_mesh(mesh: TriangleMesh, path) -> None:
    """ASCII OFF: 'OFF' header, counts line, vertex lines, '3 i j k' faces."""
    v, t = mesh_arrays(mesh)
    lines = ["OFF", f"{len(v)} {len(t)} 0"]
    lines.extend(f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in v)
    lines.extend(f"3 {a} {b} {c}" for a, b, c in t)
    _write_text(path, "\n".join(lines) + "\n")


def read_mesh(path) -> TriangleMesh:
    """Read an ASCII OFF file; tolerant of comments and blank lines."""
    try:
        with _open_text(path, "r") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputFormatError(f"cannot read mesh file {path}: {exc}") from exc
    tokens = []
    for line in raw.splitlines():
        body = line.split("#", 1)[0].strip()
        if body:
            tokens.extend(body.split())
    if not tokens or tokens[0] != "OFF":
        raise InputFormatError(f"{path}: not an OFF file (missing OFF header)")
    pos = 1
    try:
        nv, nf = int(tokens[pos]), int(tokens[pos + 1])
        pos += 3  # counts line is "V F E"; the edge count is ignored
        verts = np.array(tokens[pos : pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
        pos += 3 * nv
        tris = np.empty((nf, 3), dtype=np.int64)
        for f in range(nf):
            if tokens[pos] != "3":
                raise InputFormatError(
                    f"{path}: face {f} has {tokens[pos]} vertices, only triangles supported"
                )
            tris[f] = (int(tokens[pos + 1]), int(tokens[pos + 2]), int(tokens[pos + 3]))
            pos += 4
    except InputFormatError:
        raise
    except (ValueError, IndexError) as exc:
        raise InputFormatError(f"{path}: malformed OFF file: {exc}") from exc
    try:
        return TriangleMesh(verts, tris)
    except UsageError as exc:
        raise InputFormatError(f"{path}: {exc}") from exc


# --- per-vertex overlays -----------------------------------------------------


def write_overlay(path, values, column: str = "value") -> None:
    """Per-vertex scalar CSV with header 'vertex,<column>'."""
    vals = np.asarray(values)
    if vals.ndim != 1:
        raise UsageError("overlay values must be a 1-D array")
    is_int = np.issubdtype(vals.dtype, np.integer)
    lines = [f"vertex,{column}"]
    lines.extend(
        f"{i},{int(x)}" if is_int else f"{i},{float(x):.17g}" for i, x in enumerate(vals)
    )
    _write_text(path, "\n".join(lines) + "\n")


def read_overlay(path, n_vertices: Optional[int] = None,
                 column: str = "value", integer: bool = False) -> np.ndarray:
    """Read a per-vertex CSV back; validates indices and names the bad line."""
    try:
        with _open_text(path, "r") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputFormatError(f"cannot read overlay {path}: {exc}") from exc
    if not lines:
        raise InputFormatError(f"{path}: empty overlay file")
    header = [h.strip() for h in lines[0].split(",")]
    if len(header) != 2 or header[0] != "vertex":
        raise InputFormatError(
            f"{path}: line 1: expected header 'vertex,{column}', got '{lines[0]}'"
        )
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise InputFormatError(f"{path}: line {ln}: expected 2 columns")
        try:
            idx = int(parts[0])
            val = int(parts[1]) if integer else float(parts[1])
        except ValueError as exc:
            raise InputFormatError(f"{path}: line {ln}: {exc}") from exc
        if idx < 0 or (n_vertices is not None and idx >= n_vertices):
            raise InputFormatError(
                f"{path}: line {ln}: vertex index {idx} out of range"
                + (f" (mesh has {n_vertices} vertices)" if n_vertices is not None else "")
            )
        rows.append((idx, val))
    if not rows:
        raise InputFormatError(f"{path}: overlay has a header but no rows")
    n = n_vertices if n_vertices is not None else max(r[0] for r in rows) + 1
    seen = np.zeros(n, dtype=bool)
    out = np.zeros(n, dtype=np.int64 if integer else np.float64)
    for idx, val in rows:
        seen[idx] = True
        out[idx] = val
    if not seen.all():
        raise InputFormatError(
            f"{path}: overlay missing {int((~seen).sum())} of {n} vertex rows"
        )
    return out
