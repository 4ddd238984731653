"""Mesh layer tests: data model, file i/o, extraction, refinement, correction.

Oracle strategy: topology counts are pinned against classic polyhedra with
known Euler characteristics; extraction and refinement against analytic sphere
phantoms where point-to-surface distance has a closed form; the intersection
tester against an all-pairs brute-force sweep.
"""

import gzip

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from cortexforge.errors import (
    GeometryError,
    InputFormatError,
    TopologyError,
    UsageError,
)
from cortexforge.mesh import (
    TriangleMesh,
    expand_pial,
    marching_cubes,
    read_mesh,
    read_overlay,
    refine_to_sdf,
    self_intersections,
    self_intersections_bruteforce,
    topology_correct,
    topology_report,
    vertex_adjacency,
    write_mesh,
    write_overlay,
)
from cortexforge.phantoms import icosahedron, icosphere, sphere_sdf, torus_mesh
from cortexforge.sdf import SdfVolume, mesh_to_sdf, sample_sdf
from cortexforge.volio import GridGeometry, VoxelGrid


def ico_mesh(radius=1.0, center=(0.0, 0.0, 0.0), subdivisions=0):
    if subdivisions == 0:
        v, t = icosahedron(radius, center)
    else:
        v, t = icosphere(radius, subdivisions, center)
    return TriangleMesh(v, t)


def clipped(field, geom, clip=5.0):
    grid = np.clip(field, -clip, clip).astype(np.float32)
    return SdfVolume(VoxelGrid(grid, geom.affine), clip_mm=clip)


def analytic_sphere(geom, center, radius):
    return SdfVolume(sphere_sdf(geom, center, radius), clip_mm=5.0)


class TestTriangleMesh:
    def test_arrays_are_frozen_copies(self):
        v = np.zeros((3, 3))
        m = TriangleMesh(v, np.array([[0, 1, 2]]))
        v[0, 0] = 99.0  # caller's array stays theirs
        assert m.vertices[0, 0] == 0.0
        with pytest.raises(ValueError):
            m.vertices[0, 0] = 1.0

    def test_index_out_of_range_rejected(self):
        with pytest.raises(UsageError):
            TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))
        with pytest.raises(UsageError):
            TriangleMesh(np.zeros((3, 3)), np.array([[0, -1, 2]]))

    def test_transformed_rigid(self):
        m = ico_mesh(2.0)
        M = np.eye(4)
        M[:3, 3] = (1.0, 2.0, 3.0)
        out = m.transformed(M)
        assert np.allclose(out.vertices, m.vertices + (1.0, 2.0, 3.0))
        assert np.array_equal(out.triangles, m.triangles)

    def test_transformed_reflection_flips_winding(self):
        m = ico_mesh(2.0)
        M = np.diag([-1.0, 1.0, 1.0, 1.0])
        out = m.transformed(M)
        # volume sign via divergence theorem must stay positive
        def volume(mesh):
            a, b, c = (mesh.vertices[mesh.triangles[:, k]] for k in range(3))
            return np.sum(np.einsum("ij,ij->i", a, np.cross(b, c))) / 6.0
        assert volume(m) > 0
        assert volume(out) > 0


class TestTopologyReport:
    def test_icosahedron_counts(self):
        rep = topology_report(ico_mesh())
        assert (rep.n_vertices, rep.n_edges, rep.n_triangles) == (12, 30, 20)
        assert rep.euler == 2
        assert rep.genus == 0
        assert rep.n_components == 1
        assert rep.closed_manifold

    def test_torus_genus_one(self):
        v, t = torus_mesh()
        rep = topology_report(TriangleMesh(v, t))
        assert rep.euler == 0
        assert rep.genus == 1
        assert rep.closed_manifold

    def test_two_spheres_additive(self):
        a = ico_mesh(1.0)
        b = ico_mesh(1.0, center=(5.0, 0.0, 0.0))
        both = TriangleMesh(
            np.vstack([a.vertices, b.vertices]),
            np.vstack([a.triangles, b.triangles + 12]),
        )
        rep = topology_report(both)
        assert rep.n_components == 2
        assert rep.euler == 4

    def test_open_surface_boundary_edges(self):
        v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
        rep = topology_report(TriangleMesh(v, np.array([[0, 1, 2]])))
        assert rep.n_boundary_edges == 3
        assert not rep.closed_manifold

    def test_self_intersection_count_optional(self):
        rep = topology_report(ico_mesh())
        assert rep.n_self_intersections is None
        rep2 = topology_report(ico_mesh(), count_self_intersections=True)
        assert rep2.n_self_intersections == 0

    def test_vertex_adjacency_valences(self):
        adj = vertex_adjacency(ico_mesh()).tocsr()
        assert (np.diff(adj.indptr) == 5).all()  # every icosahedron vertex has 5 neighbors


class TestMeshIO:
    def test_roundtrip_exact(self, tmp_path):
        m = ico_mesh(3.7, center=(0.1, -2.5, 8.0), subdivisions=2)
        p = tmp_path / "m.off"
        write_mesh(m, p)
        back = read_mesh(p)
        assert np.array_equal(back.vertices, m.vertices)
        assert np.array_equal(back.triangles, m.triangles)

    def test_gzip_roundtrip(self, tmp_path):
        m = ico_mesh()
        p = tmp_path / "m.off.gz"
        write_mesh(m, p)
        with gzip.open(p) as f:
            assert f.read(3) == b"OFF"
        back = read_mesh(p)
        assert np.array_equal(back.vertices, m.vertices)

    def test_reader_tolerates_comments_and_blanks(self, tmp_path):
        p = tmp_path / "c.off"
        p.write_text("OFF\n# a comment\n\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n# another\n3 0 1 2\n")
        m = read_mesh(p)
        assert m.n_vertices == 3 and m.n_triangles == 1

    def test_malformed_inputs_named(self, tmp_path):
        cases = {
            "bad_magic.off": "OFZ\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n",
            "short.off": "OFF\n3 1 0\n0 0 0\n1 0 0\n",
            "bad_face.off": "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n4 0 1 2 0\n",
            "bad_index.off": "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n",
        }
        for name, text in cases.items():
            p = tmp_path / name
            p.write_text(text)
            with pytest.raises(InputFormatError) as exc:
                read_mesh(p)
            assert name in str(exc.value)

    def test_overlay_roundtrip(self, tmp_path):
        vals = np.linspace(-2.0, 3.0, 12)
        p = tmp_path / "thick.csv"
        write_overlay(p, vals, column="thickness_mm")
        back = read_overlay(p, n_vertices=12, column="thickness_mm")
        assert np.array_equal(back, vals)

    def test_overlay_integer_labels(self, tmp_path):
        labels = np.array([0, 3, 3, 7])
        p = tmp_path / "lab.csv"
        write_overlay(p, labels, column="label")
        back = read_overlay(p, n_vertices=4, column="label", integer=True)
        assert back.dtype.kind == "i"
        assert np.array_equal(back, labels)

    def test_overlay_errors_name_file_and_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("vertex,value\n0,1.0\nnotanint,2.0\n")
        with pytest.raises(InputFormatError) as exc:
            read_overlay(p)
        msg = str(exc.value)
        assert "bad.csv" in msg and "line 3" in msg

    def test_overlay_incomplete_rejected(self, tmp_path):
        p = tmp_path / "sparse.csv"
        p.write_text("vertex,value\n0,1.0\n2,2.0\n")
        with pytest.raises(InputFormatError):
            read_overlay(p, n_vertices=3)


class TestMarchingCubes:
    def test_analytic_sphere_accuracy_and_topology(self):
        geom = GridGeometry.from_spacing((48, 48, 48), 1.0)
        c = 23.5
        sdf = analytic_sphere(geom, (c, c, c), 20.0)
        mesh = marching_cubes(sdf)
        r = np.linalg.norm(mesh.vertices - c, axis=1)
        assert np.abs(r - 20.0).max() < 0.3
        rep = topology_report(mesh)
        assert rep.euler == 2
        assert rep.genus == 0
        assert rep.closed_manifold

    def test_vertices_on_interpolated_zero(self):
        geom = GridGeometry.from_spacing((32, 32, 32), 1.0)
        sdf = analytic_sphere(geom, (15.5, 15.5, 15.5), 10.0)
        mesh = marching_cubes(sdf)
        vals, _ = sample_sdf(sdf, mesh.vertices)
        assert np.abs(vals).max() < 1e-4 * sdf.clip_mm

    def test_two_spheres_two_components(self):
        geom = GridGeometry.from_spacing((56, 32, 32), 1.0)
        pts = geom.voxel_centers().reshape(56, 32, 32, 3)
        d1 = np.linalg.norm(pts - (15.0, 15.5, 15.5), axis=-1) - 8.0
        d2 = np.linalg.norm(pts - (40.0, 15.5, 15.5), axis=-1) - 8.0
        sdf = clipped(np.minimum(d1, d2), geom)
        rep = topology_report(marching_cubes(sdf))
        assert rep.n_components == 2
        assert rep.euler == 4

    def test_no_crossing_is_an_error(self):
        geom = GridGeometry.from_spacing((8, 8, 8), 1.0)
        sdf = clipped(np.full((8, 8, 8), 4.0), geom)
        with pytest.raises(GeometryError):
            marching_cubes(sdf)

    def test_iso_outside_clip_rejected(self):
        geom = GridGeometry.from_spacing((16, 16, 16), 1.0)
        sdf = analytic_sphere(geom, (7.5, 7.5, 7.5), 5.0)
        with pytest.raises(UsageError):
            marching_cubes(sdf, iso=5.0)

    def test_nonzero_iso_level(self):
        geom = GridGeometry.from_spacing((32, 32, 32), 1.0)
        sdf = analytic_sphere(geom, (15.5, 15.5, 15.5), 9.0)
        mesh = marching_cubes(sdf, iso=2.0)  # offset surface of a sphere is a sphere
        r = np.linalg.norm(mesh.vertices - 15.5, axis=1)
        assert np.abs(r - 11.0).max() < 0.3

    def test_anisotropic_spacing(self):
        geom = GridGeometry.from_spacing((40, 40, 14), (1.0, 1.0, 3.0))
        sdf = analytic_sphere(geom, (19.5, 19.5, 19.5), 12.0)
        mesh = marching_cubes(sdf)
        r = np.linalg.norm(mesh.vertices - 19.5, axis=1)
        # z error scales with the coarse 3 mm axis
        assert np.abs(r - 12.0).max() < 1.2
        assert topology_report(mesh).closed_manifold


class TestSelfIntersections:
    def test_convex_mesh_clean(self):
        n, pairs = self_intersections(ico_mesh(5.0, subdivisions=3))
        assert n == 0 and pairs.shape == (0, 2)

    def test_overlapping_strips_detected(self):
        # two copies of a flat strip, second shifted half a cell and tilted through the first
        v = np.array(
            [[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0], [1, 1, 0], [2, 1, 0]]
        )
        t = np.array([[0, 1, 3], [1, 4, 3], [1, 2, 4], [2, 5, 4]])
        w = v + (0.4, 0.3, 0.5)
        w[:, 2] -= np.linspace(0.0, 1.0, 6)  # tilt so the planes actually cross
        both = TriangleMesh(np.vstack([v, w]), np.vstack([t, t + 6]))
        n, pairs = self_intersections(both)
        assert n > 0
        assert pairs.shape[1] == 2

    def test_shared_vertex_pairs_excluded(self):
        m = ico_mesh(3.0, subdivisions=1)
        assert self_intersections(m)[0] == 0

    def test_matches_bruteforce_on_soups(self):
        rng = np.random.default_rng(11)
        for trial in range(3):
            v = rng.uniform(0, 8, (120, 3))
            t = rng.integers(0, 120, (160, 3))
            t = t[(t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])]
            soup = TriangleMesh(v, t)
            na, pa = self_intersections(soup)
            nb, pb = self_intersections_bruteforce(soup)
            assert na == nb
            assert np.array_equal(pa, pb)

    def test_coplanar_neighbors_not_flagged(self):
        # disjoint triangles in one plane: exact arithmetic must say no
        va = np.array([[0.0, 0, 0], [4, 0, 0], [0, 4, 0]])
        vb = np.array([[5.0, 0, 0], [9, 0, 0], [5, 4, 0]])
        m = TriangleMesh(np.vstack([va, vb]), np.array([[0, 1, 2], [3, 4, 5]]))
        assert self_intersections(m)[0] == 0

    def test_coplanar_overlap_flagged(self):
        va = np.array([[0.0, 0, 0], [4, 0, 0], [0, 4, 0]])
        vb = np.array([[1.0, 1, 0], [5, 1, 0], [1, 5, 0]])
        m = TriangleMesh(np.vstack([va, vb]), np.array([[0, 1, 2], [3, 4, 5]]))
        assert self_intersections(m)[0] == 1

    def test_marching_cubes_output_clean(self):
        geom = GridGeometry.from_spacing((40, 40, 40), 1.0)
        sdf = analytic_sphere(geom, (19.5, 19.5, 19.5), 13.0)
        assert self_intersections(marching_cubes(sdf))[0] == 0


class TestRefineToSdf:
    GEOM = GridGeometry.from_spacing((48, 48, 48), 1.0)
    C = 24.0

    def test_fixed_point_once_equilibrated(self):
        # the smoothing term first relaxes an icosphere's slight edge
        # nonuniformity; equilibrate, rebuild the SDF, then hold still
        mesh = ico_mesh(15.0, (self.C,) * 3, subdivisions=4)
        relaxed = refine_to_sdf(mesh, mesh_to_sdf(mesh, self.GEOM))
        out = refine_to_sdf(relaxed, mesh_to_sdf(relaxed, self.GEOM))
        drift = np.linalg.norm(out.vertices - relaxed.vertices, axis=1)
        assert drift.max() < 0.05

    def test_perturbed_sphere_recovers(self):
        rng = np.random.default_rng(3)
        mesh = ico_mesh(15.0, (self.C,) * 3, subdivisions=4)
        normals = (mesh.vertices - self.C) / 15.0
        noisy = TriangleMesh(
            mesh.vertices + normals * rng.uniform(-1, 1, (mesh.n_vertices, 1)),
            mesh.triangles,
        )
        sdf = analytic_sphere(self.GEOM, (self.C,) * 3, 15.0)
        out = refine_to_sdf(noisy, sdf)
        # |distance to sphere| has a closed form, so ASD needs no sampling
        r = np.linalg.norm(out.vertices - self.C, axis=1)
        assert np.abs(r - 15.0).mean() < 0.15
        assert self_intersections(out)[0] == 0

    def test_energy_non_increasing(self):
        rng = np.random.default_rng(5)
        mesh = ico_mesh(12.0, (self.C,) * 3, subdivisions=3)
        normals = (mesh.vertices - self.C) / 12.0
        noisy = TriangleMesh(
            mesh.vertices + normals * rng.uniform(-1, 1, (mesh.n_vertices, 1)),
            mesh.triangles,
        )
        sdf = analytic_sphere(self.GEOM, (self.C,) * 3, 12.0)
        out, trace = refine_to_sdf(noisy, sdf, return_trace=True)
        energies = np.asarray(trace)
        assert len(energies) >= 2
        assert np.all(np.diff(energies) <= 1e-9 * max(1.0, energies[0]))

    def test_nonmanifold_input_rejected(self):
        v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]])
        t = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])  # edge 0-1 borders 3 faces
        sdf = analytic_sphere(self.GEOM, (self.C,) * 3, 10.0)
        with pytest.raises(TopologyError):
            refine_to_sdf(TriangleMesh(v, t), sdf)


class TestExpandPial:
    GEOM = GridGeometry.from_spacing((56, 56, 56), 1.0)
    C = 28.0

    def test_identity_when_targets_coincide(self):
        from cortexforge.sdf import SurfaceIndex

        white = marching_cubes(analytic_sphere(self.GEOM, (self.C,) * 3, 15.0))
        out = expand_pial(white, analytic_sphere(self.GEOM, (self.C,) * 3, 15.0))
        # vertices may slide along the surface; what must not change is the
        # surface itself, so compare symmetric vertex-to-surface distances
        d_ow = SurfaceIndex(white).unsigned_distance(out.vertices)
        d_wo = SurfaceIndex(out).unsigned_distance(white.vertices)
        asd = 0.5 * (d_ow.mean() + d_wo.mean())
        assert asd < 0.05

    def test_concentric_spheres_reach_outer(self):
        white = marching_cubes(analytic_sphere(self.GEOM, (self.C,) * 3, 20.0))
        pial_sdf = analytic_sphere(self.GEOM, (self.C,) * 3, 22.5)
        out = expand_pial(white, pial_sdf)
        r = np.linalg.norm(out.vertices - self.C, axis=1)
        assert np.abs(r - 22.5).max() < 0.15
        # connectivity carried over unchanged: vertex k corresponds to white vertex k
        assert np.array_equal(out.triangles, white.triangles)
        assert out.n_vertices == white.n_vertices

    def test_never_inside_white(self):
        from cortexforge.sdf import SurfaceIndex

        white = marching_cubes(analytic_sphere(self.GEOM, (self.C,) * 3, 18.0))
        pial_sdf = analytic_sphere(self.GEOM, (self.C,) * 3, 21.0)
        out = expand_pial(white, pial_sdf)
        signed = SurfaceIndex(white).signed_distance(out.vertices)
        assert signed.min() > -0.01


class TestTopologyCorrect:
    GEOM = GridGeometry.from_spacing((40, 40, 40), 1.0)
    C = np.array([19.5, 19.5, 19.5])

    def _points(self):
        return self.GEOM.voxel_centers().reshape(40, 40, 40, 3)

    def test_genus_zero_near_noop(self):
        sdf = analytic_sphere(self.GEOM, self.C, 12.0)
        out = topology_correct(sdf)
        r = np.linalg.norm(marching_cubes(out).vertices - self.C, axis=1)
        assert np.abs(r - 12.0).max() < 0.2

    def test_drilled_tunnel_closed(self):
        pts = self._points()
        sphere = np.linalg.norm(pts - self.C, axis=-1) - 12.0
        rho = np.linalg.norm(pts[..., :2] - self.C[:2], axis=-1)
        drilled = np.maximum(sphere, 1.0 - rho)  # 2-voxel-wide shaft along z
        sdf = clipped(drilled, self.GEOM)
        assert topology_report(marching_cubes(sdf)).genus == 1
        out = topology_correct(sdf)
        rep = topology_report(marching_cubes(out))
        assert rep.genus == 0
        assert rep.n_components == 1

    def test_interior_bubble_filled(self):
        pts = self._points()
        r = np.linalg.norm(pts - self.C, axis=-1)
        hollow = np.maximum(r - 12.0, 4.0 - r)  # air pocket of radius 4
        sdf = clipped(hollow, self.GEOM)
        before = int((sdf.data < 0).sum())
        bubble = int((r < 4.0).sum())
        out = topology_correct(sdf)
        after = int((out.data < 0).sum())
        assert abs((after - before) - bubble) <= 0.1 * bubble
        assert topology_report(marching_cubes(out)).genus == 0

    def test_uncorrectable_carries_report(self):
        pts = self._points()
        rho = np.linalg.norm(pts[..., :2] - self.C[:2], axis=-1)
        # a fat solid torus survives ball-3 opening and its hole defeats closing
        tor = np.sqrt((rho - 13.0) ** 2 + (pts[..., 2] - self.C[2]) ** 2) - 5.5
        with pytest.raises(TopologyError) as exc:
            topology_correct(clipped(tor, self.GEOM))
        assert exc.value.report is not None
        assert exc.value.report.genus >= 1


class TestRigidMotionInvariance:
    def _motion(self):
        M = np.eye(4)
        M[:3, :3] = Rotation.from_euler("xyz", [17, -31, 54], degrees=True).as_matrix()
        M[:3, 3] = (7.0, -3.0, 11.0)
        return M

    def _moved_sdf(self, sdf, M):
        geom = GridGeometry(sdf.geometry.dims, M @ sdf.geometry.affine)
        return SdfVolume(VoxelGrid(sdf.data, geom.affine), clip_mm=sdf.clip_mm)

    def test_marching_cubes_equivariant(self):
        geom = GridGeometry.from_spacing((32, 32, 32), 1.0)
        sdf = analytic_sphere(geom, (15.5, 15.5, 15.5), 10.0)
        M = self._motion()
        a = marching_cubes(sdf).transformed(M)
        b = marching_cubes(self._moved_sdf(sdf, M))
        assert np.linalg.norm(a.vertices - b.vertices, axis=1).max() < 1e-6
        assert np.array_equal(a.triangles, b.triangles)

    def test_refine_equivariant(self):
        geom = GridGeometry.from_spacing((32, 32, 32), 1.0)
        c = 16.0
        rng = np.random.default_rng(9)
        mesh = ico_mesh(10.0, (c,) * 3, subdivisions=3)
        normals = (mesh.vertices - c) / 10.0
        noisy = TriangleMesh(
            mesh.vertices + normals * rng.uniform(-0.8, 0.8, (mesh.n_vertices, 1)),
            mesh.triangles,
        )
        sdf = analytic_sphere(geom, (c,) * 3, 10.0)
        M = self._motion()
        a = refine_to_sdf(noisy, sdf).transformed(M)
        b = refine_to_sdf(noisy.transformed(M), self._moved_sdf(sdf, M))
        assert np.linalg.norm(a.vertices - b.vertices, axis=1).max() < 1e-6

    def test_topology_and_intersections_invariant(self):
        m = ico_mesh(5.0, subdivisions=2)
        M = self._motion()
        ra, rb = topology_report(m), topology_report(m.transformed(M))
        assert (ra.euler, ra.genus, ra.n_components) == (rb.euler, rb.genus, rb.n_components)
        assert self_intersections(m.transformed(M))[0] == self_intersections(m)[0]
