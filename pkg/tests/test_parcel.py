"""Label table, lobe grouping, label transfer, and label-file round trips."""

import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from cortexforge.errors import InputFormatError, UsageError
from cortexforge.mesh import TriangleMesh
from cortexforge.parcel import (
    LOBE_IDS,
    UNKNOWN,
    LabelTable,
    group_to_lobes,
    read_labels,
    transfer_labels,
    write_labels,
)
from cortexforge.phantoms import icosphere


def ico(radius, subdivisions=3):
    return TriangleMesh(*icosphere(radius, subdivisions))


class TestLabelTable:
    def test_default_region_count(self):
        table = LabelTable.default()
        assert len(table.regions) == 34
        assert table.labels() == list(range(1, 35))

    def test_default_lobe_census(self):
        table = LabelTable.default()
        census = {}
        for lab in table.labels():
            lobe = table.lobe(lab)
            census[lobe] = census.get(lobe, 0) + 1
        assert census == {
            "frontal": 11,
            "parietal": 5,
            "occipital": 4,
            "temporal": 9,
            "cingulate-insula": 5,
        }

    def test_lookup_and_fallbacks(self):
        table = LabelTable.default()
        assert table.name(1) == "bankssts"
        assert table.lobe(1) == "temporal"
        assert table.name(999) == "unknown"
        assert table.lobe(999) == "unknown"
        # lobe ids resolve to their own names
        assert table.lobe(LOBE_IDS["frontal"]) == "frontal"

    def test_groupings(self):
        table = LabelTable.default()
        assert table.region_grouping()[7] == table.name(7)
        assert set(table.lobe_grouping()) == set(LOBE_IDS.values())

    def test_unknown_lobe_rejected(self):
        with pytest.raises(InputFormatError):
            LabelTable({1: {"name": "x", "lobe": "limbic"}})

    def test_duplicate_name_rejected(self):
        with pytest.raises(InputFormatError):
            LabelTable(
                {
                    1: {"name": "x", "lobe": "frontal"},
                    2: {"name": "x", "lobe": "parietal"},
                }
            )

    def test_duplicate_id_via_string_keys_rejected(self):
        with pytest.raises(InputFormatError):
            LabelTable({"1": {"name": "x", "lobe": "frontal"}, 1: {"name": "y", "lobe": "frontal"}})

    def test_from_json(self, tmp_path):
        doc = {"regions": {"4": {"name": "roi", "lobe": "parietal"}}}
        path = tmp_path / "table.json"
        path.write_text(json.dumps(doc))
        table = LabelTable.from_json(path)
        assert table.name(4) == "roi"

    def test_from_json_errors_name_the_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(InputFormatError, match="bad.json"):
            LabelTable.from_json(path)
        path2 = tmp_path / "nokey.json"
        path2.write_text("{}")
        with pytest.raises(InputFormatError, match="regions"):
            LabelTable.from_json(path2)


class TestGroupToLobes:
    def test_full_mapping_single_lobe(self):
        table = LabelTable(
            {
                1: {"name": "a", "lobe": "occipital"},
                2: {"name": "b", "lobe": "occipital"},
            }
        )
        out, unknown = group_to_lobes(np.array([1, 2, 2, 1]), table)
        assert (out == LOBE_IDS["occipital"]).all()
        assert unknown == 0

    def test_unknown_labels_flagged_not_fatal(self):
        table = LabelTable.default()
        out, unknown = group_to_lobes(np.array([1, 77, 2, 77]), table)
        assert unknown == 2
        assert (out[[1, 3]] == UNKNOWN).all()
        assert out[0] == LOBE_IDS[table.lobe(1)]

    def test_idempotent(self):
        table = LabelTable.default()
        labs = np.array([1, 5, 12, 30, 999, 0])
        once, n1 = group_to_lobes(labs, table)
        twice, n2 = group_to_lobes(once, table)
        assert (once == twice).all()
        assert n1 == n2

    def test_output_stays_in_lobe_set(self):
        table = LabelTable.default()
        rng = np.random.default_rng(0)
        labs = rng.integers(-3, 40, 500)
        out, _ = group_to_lobes(labs, table)
        assert out.shape == labs.shape
        assert set(np.unique(out)) <= set(LOBE_IDS.values())

    def test_float_labels_rejected(self):
        with pytest.raises(UsageError):
            group_to_lobes(np.array([1.0, 2.0]), LabelTable.default())


class TestTransferLabels:
    def test_identity_exact(self):
        m = ico(10.0)
        rng = np.random.default_rng(1)
        labs = rng.integers(1, 35, m.n_vertices)
        out, dist = transfer_labels(m, labs, m)
        assert (out == labs).all()
        assert dist.max() == 0.0

    def test_tiny_translation_keeps_labels(self):
        m = ico(10.0)
        rng = np.random.default_rng(2)
        labs = rng.integers(1, 35, m.n_vertices)
        M = np.eye(4)
        M[:3, 3] = (0.01, 0.0, 0.0)
        out, dist = transfer_labels(m, labs, m.transformed(M))
        assert (out == labs).all()
        assert dist.max() <= 0.01 + 1e-12

    def test_hemisphere_boundary_stays_near_equator(self):
        src = ico(10.0, 3)
        labs = np.where(src.vertices[:, 2] >= 0.0, 1, 2).astype(np.int64)
        tgt = ico(10.0, 5)
        out, _ = transfer_labels(src, labs, tgt)
        edges = src.vertices[src.triangles] - np.roll(src.vertices[src.triangles], 1, axis=1)
        band = 2.0 * np.linalg.norm(edges, axis=2).max()
        z = tgt.vertices[:, 2]
        assert z[out == 1].min() > -band
        assert z[out == 2].max() < band

    def test_rigid_motion_equivariance(self):
        src = ico(10.0, 2)
        tgt = ico(10.4, 2)
        rng = np.random.default_rng(3)
        labs = rng.integers(1, 6, src.n_vertices)
        M = np.eye(4)
        M[:3, :3] = Rotation.from_euler("zxy", [33, -71, 12], degrees=True).as_matrix()
        M[:3, 3] = (4.0, -2.0, 9.0)
        base, dist = transfer_labels(src, labs, tgt)
        moved, dist_m = transfer_labels(src.transformed(M), labs, tgt.transformed(M))
        assert (base == moved).all()
        assert np.abs(dist - dist_m).max() < 1e-9

    def test_empty_source_rejected(self):
        empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        with pytest.raises(UsageError):
            transfer_labels(empty, np.zeros(0, dtype=np.int64), ico(5.0, 1))

    def test_misaligned_labels_rejected(self):
        m = ico(5.0, 1)
        with pytest.raises(UsageError):
            transfer_labels(m, np.zeros(m.n_vertices - 1, dtype=np.int64), m)


class TestLabelFiles:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        labs = rng.integers(0, 35, 40)
        path = tmp_path / "labels.csv"
        write_labels(path, labs)
        assert (read_labels(path, n_vertices=40) == labs).all()
        assert path.read_text().splitlines()[0] == "vertex,label"

    def test_rows_in_any_order(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("vertex,label\n2,7\n0,5\n1,6\n")
        assert read_labels(path, n_vertices=3).tolist() == [5, 6, 7]

    def test_bad_vertex_index_names_line(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("vertex,label\n0,5\n9,6\n")
        with pytest.raises(InputFormatError, match="line 3"):
            read_labels(path, n_vertices=2)

    def test_non_integer_names_line(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("vertex,label\n0,5\n1,frontal\n")
        with pytest.raises(InputFormatError, match="line 3"):
            read_labels(path, n_vertices=2)

    def test_duplicate_vertex_rejected(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("vertex,label\n0,5\n0,6\n")
        with pytest.raises(InputFormatError, match="twice"):
            read_labels(path, n_vertices=1)

    def test_missing_vertex_rejected(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("vertex,label\n0,5\n2,6\n")
        with pytest.raises(InputFormatError, match="vertex 1"):
            read_labels(path, n_vertices=3)

    def test_without_vertex_count_infers_length(self, tmp_path):
        path = tmp_path / "labels.csv"
        path.write_text("vertex,label\n0,5\n3,6\n")
        out = read_labels(path)
        assert out.tolist() == [5, UNKNOWN, UNKNOWN, 6]
