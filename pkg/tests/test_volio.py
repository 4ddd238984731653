"""Volume I/O: header parsing, byte-exact round trips, resampling."""

import gzip
import struct

import numpy as np
import pytest

from cortexforge.errors import InputFormatError, UsageError
from cortexforge.volio import (
    GridGeometry,
    VoxelGrid,
    read_header,
    read_volume,
    resample,
    write_volume,
)


def minimal_nifti_bytes(dims=(4, 4, 4), datatype=16, payload=None, byteorder="<",
                        sizeof_hdr=348, magic=b"n+1\x00", sform=1, qform=0,
                        scl_slope=1.0, scl_inter=0.0, pixdim=(1.0, 1.0, 1.0)):
    """Hand-assembled single-file NIfTI-1 blob; the independent oracle for the parser."""
    bo = byteorder
    hdr = bytearray(348)
    struct.pack_into(bo + "i", hdr, 0, sizeof_hdr)
    struct.pack_into(bo + "8h", hdr, 40, 3, *dims, 1, 1, 1, 1)
    bitpix = {2: 8, 4: 16, 16: 32, 64: 64}[datatype]
    struct.pack_into(bo + "2h", hdr, 70, datatype, bitpix)
    struct.pack_into(bo + "8f", hdr, 76, 1.0, *pixdim, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into(bo + "3f", hdr, 108, 352.0, scl_slope, scl_inter)
    struct.pack_into(bo + "2h", hdr, 252, qform, sform)
    if sform:
        struct.pack_into(bo + "4f", hdr, 280, pixdim[0], 0, 0, 0)
        struct.pack_into(bo + "4f", hdr, 296, 0, pixdim[1], 0, 0)
        struct.pack_into(bo + "4f", hdr, 312, 0, 0, pixdim[2], 0)
    hdr[344:348] = magic
    n = dims[0] * dims[1] * dims[2]
    if payload is None:
        dt = {2: np.uint8, 4: np.int16, 16: np.float32, 64: np.float64}[datatype]
        payload = np.arange(n, dtype=dt)
    raw = payload.astype(payload.dtype.newbyteorder(bo)).tobytes(order="F")
    return bytes(hdr) + b"\x00\x00\x00\x00" + raw


class TestReadVolume:
    def test_minimal_wellformed_file(self, tmp_path):
        p = tmp_path / "t.nii"
        p.write_bytes(minimal_nifti_bytes())
        grid = read_volume(p)
        assert grid.dims == (4, 4, 4)
        assert grid.data.dtype == np.float32
        # payload was arange in F order; check a couple of semantic positions
        assert grid.data[0, 0, 0] == 0.0
        assert grid.data[1, 0, 0] == 1.0  # x fastest
        assert grid.data[0, 1, 0] == 4.0

    def test_wrong_sizeof_hdr_rejected(self, tmp_path):
        p = tmp_path / "t.nii"
        p.write_bytes(minimal_nifti_bytes(sizeof_hdr=347))
        with pytest.raises(InputFormatError, match="347"):
            read_volume(p)

    def test_wrong_magic_rejected(self, tmp_path):
        p = tmp_path / "t.nii"
        p.write_bytes(minimal_nifti_bytes(magic=b"ni1\x00"))
        with pytest.raises(InputFormatError, match="magic"):
            read_volume(p)

    def test_big_endian_detected_and_swapped(self, tmp_path):
        payload = np.arange(64, dtype=np.float32)
        p = tmp_path / "t.nii"
        p.write_bytes(minimal_nifti_bytes(payload=payload, byteorder=">"))
        grid = read_volume(p)
        np.testing.assert_array_equal(
            grid.data.ravel(order="F"), payload.astype(np.float32)
        )

    def test_gzip_by_magic_not_extension(self, tmp_path):
        blob = minimal_nifti_bytes()
        p = tmp_path / "misnamed.nii"  # gzipped content, no .gz suffix
        p.write_bytes(gzip.compress(blob))
        grid = read_volume(p)
        assert grid.dims == (4, 4, 4)

    def test_unsupported_datatype(self, tmp_path):
        blob = bytearray(minimal_nifti_bytes())
        struct.pack_into("<2h", blob, 70, 8, 32)  # int32: not supported
        p = tmp_path / "t.nii"
        p.write_bytes(bytes(blob))
        with pytest.raises(InputFormatError, match="datatype"):
            read_volume(p)

    def test_float64_read_as_float32(self, tmp_path):
        payload = np.linspace(0, 1, 64, dtype=np.float64)
        p = tmp_path / "t.nii"
        p.write_bytes(minimal_nifti_bytes(datatype=64, payload=payload))
        grid = read_volume(p)
        assert grid.data.dtype == np.float32
        np.testing.assert_allclose(grid.data.ravel(order="F"), payload, atol=1e-7)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "t.nii"
        p.write_bytes(minimal_nifti_bytes()[:-8])
        with pytest.raises(InputFormatError, match="truncated"):
            read_volume(p)

    def test_scl_slope_inter_applied(self, tmp_path):
        payload = np.arange(64, dtype=np.int16)
        p = tmp_path / "t.nii"
        p.write_bytes(minimal_nifti_bytes(datatype=4, payload=payload,
                                          scl_slope=2.0, scl_inter=10.0))
        grid = read_volume(p)
        assert grid.data.dtype == np.float32
        np.testing.assert_allclose(grid.data.ravel(order="F"),
                                   payload.astype(np.float64) * 2 + 10)

    def test_scl_slope_zero_means_one(self, tmp_path):
        payload = np.arange(64, dtype=np.int16)
        p = tmp_path / "t.nii"
        p.write_bytes(minimal_nifti_bytes(datatype=4, payload=payload, scl_slope=0.0))
        grid = read_volume(p)
        np.testing.assert_array_equal(grid.data.ravel(order="F"), payload)

    def test_qform_only_rejected(self, tmp_path):
        p = tmp_path / "t.nii"
        p.write_bytes(minimal_nifti_bytes(sform=0, qform=1))
        with pytest.raises(InputFormatError, match="qform"):
            read_volume(p)

    def test_no_form_falls_back_to_pixdim(self, tmp_path):
        p = tmp_path / "t.nii"
        p.write_bytes(minimal_nifti_bytes(sform=0, qform=0, pixdim=(2.0, 3.0, 4.0)))
        grid = read_volume(p)
        np.testing.assert_allclose(grid.spacing, (2.0, 3.0, 4.0))
        np.testing.assert_allclose(grid.affine[:3, 3], 0.0)

    def test_labels_mode(self, tmp_path):
        payload = np.arange(64, dtype=np.int16) % 5
        p = tmp_path / "t.nii"
        p.write_bytes(minimal_nifti_bytes(datatype=4, payload=payload))
        grid = read_volume(p, labels=True)
        assert grid.data.dtype == np.int16
        np.testing.assert_array_equal(grid.data.ravel(order="F"), payload)

    def test_labels_mode_rejects_fractional(self, tmp_path):
        payload = np.linspace(0, 1, 64, dtype=np.float32)
        p = tmp_path / "t.nii"
        p.write_bytes(minimal_nifti_bytes(payload=payload))
        with pytest.raises(InputFormatError, match="integral"):
            read_volume(p, labels=True)


class TestWriteVolume:
    def test_roundtrip_float32_bytes_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        data = rng.standard_normal((5, 6, 7)).astype(np.float32)
        grid = VoxelGrid(data, np.diag([1.0, 1.0, 1.0, 1.0]))
        p = tmp_path / "t.nii"
        write_volume(grid, p)
        back = read_volume(p)
        np.testing.assert_array_equal(back.data, data)
        np.testing.assert_allclose(back.affine, grid.affine, atol=1e-5)
        np.testing.assert_allclose(back.spacing, grid.spacing, atol=1e-6)
        # write twice -> identical bytes
        p2 = tmp_path / "t2.nii"
        write_volume(grid, p2)
        assert p.read_bytes() == p2.read_bytes()

    def test_file_size_arithmetic_int16(self, tmp_path):
        grid = VoxelGrid(np.ones((8, 8, 8), dtype=np.int16), np.eye(4))
        p = tmp_path / "t.nii"
        write_volume(grid, p)
        assert p.stat().st_size == 352 + 2 * 512

    def test_int16_overflow_rejected(self, tmp_path):
        grid = VoxelGrid(np.full((2, 2, 2), 40000.0, dtype=np.float32), np.eye(4))
        with pytest.raises(UsageError, match="fit"):
            write_volume(grid, tmp_path / "t.nii", datatype=4)

    def test_uint8_roundtrip(self, tmp_path):
        data = (np.arange(27) % 256).reshape(3, 3, 3).astype(np.uint8)
        grid = VoxelGrid(data, np.eye(4))
        p = tmp_path / "t.nii"
        write_volume(grid, p)
        back = read_volume(p, labels=True)
        np.testing.assert_array_equal(back.data, data.astype(np.int16))

    def test_gz_roundtrip_deterministic(self, tmp_path):
        data = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
        aff = np.eye(4)
        aff[:3, 3] = (10, 20, 30)
        grid = VoxelGrid(data, aff)
        p1, p2 = tmp_path / "a.nii.gz", tmp_path / "b.nii.gz"
        write_volume(grid, p1)
        write_volume(grid, p2)
        assert p1.read_bytes() == p2.read_bytes()  # mtime pinned to 0
        back = read_volume(p1)
        np.testing.assert_array_equal(back.data, data)
        np.testing.assert_allclose(back.affine, aff, atol=1e-5)

    def test_header_fields_on_write(self, tmp_path):
        grid = VoxelGrid(np.zeros((3, 4, 5), dtype=np.float32),
                         np.diag([2.0, 2.0, 2.0, 1.0]))
        p = tmp_path / "t.nii"
        write_volume(grid, p)
        hdr = read_header(p)
        assert hdr.magic == b"n+1\x00"
        assert hdr.vox_offset == 352.0
        assert hdr.datatype == 16
        assert hdr.dim[0] == 3 and tuple(hdr.dim[1:4]) == (3, 4, 5)
        assert hdr.sform_code == 1 and hdr.qform_code == 0


class TestVoxelGrid:
    def test_rejects_bad_dtype(self):
        with pytest.raises(UsageError, match="element type"):
            VoxelGrid(np.zeros((2, 2, 2), dtype=np.int32), np.eye(4))

    def test_rejects_spacing_affine_mismatch(self):
        with pytest.raises(UsageError, match="spacing"):
            VoxelGrid(np.zeros((2, 2, 2), dtype=np.float32), np.eye(4),
                      spacing=(2.0, 1.0, 1.0))

    def test_rejects_singular_affine(self):
        aff = np.eye(4)
        aff[0, 0] = 0.0
        with pytest.raises(UsageError, match="invertible"):
            VoxelGrid(np.zeros((2, 2, 2), dtype=np.float32), aff)

    def test_immutable_and_caller_array_untouched(self):
        src = np.zeros((2, 2, 2), dtype=np.float32)
        grid = VoxelGrid(src, np.eye(4))
        src[0, 0, 0] = 5.0  # caller's copy stays writable
        assert grid.data[0, 0, 0] == 0.0
        with pytest.raises(ValueError):
            grid.data[0, 0, 0] = 1.0

    def test_spacing_from_rotated_affine(self):
        th = 0.3
        rot = np.eye(4)
        rot[:2, :2] = [[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]]
        rot[:3, :3] *= 1.5
        grid = VoxelGrid(np.zeros((2, 2, 2), dtype=np.float32), rot)
        np.testing.assert_allclose(grid.spacing, 1.5, atol=1e-12)


class TestResample:
    def test_constant_preserved(self):
        # any target whose centers stay inside the source hull
        grid = VoxelGrid(np.full((8, 8, 8), 3.25, dtype=np.float32), np.eye(4))
        target = GridGeometry.from_spacing((5, 5, 5), (1.5, 1.5, 1.5), origin=(0.4, 0.2, 0.2))
        out = resample(grid, target)
        np.testing.assert_allclose(out.data, 3.25, atol=1e-6)

    def test_linear_ramp_halved_spacing(self):
        # f(x) = x sampled at 1 mm, resampled to 0.5 mm: trilinear is exact on
        # linear fields wherever the target center falls inside the source hull.
        nx = 16
        x = np.arange(nx, dtype=np.float32)
        data = np.broadcast_to(x[:, None, None], (nx, 8, 8)).copy()
        grid = VoxelGrid(data, np.eye(4))
        target = GridGeometry.from_spacing((2 * nx - 2, 8, 8), (0.5, 1.0, 1.0))
        out = resample(grid, target)
        expect = np.arange(2 * nx - 2, dtype=np.float64) * 0.5
        np.testing.assert_allclose(
            out.data[:, 2:6, 2:6],
            np.broadcast_to(expect[:, None, None], (2 * nx - 2, 4, 4)),
            atol=1e-5,
        )

    def test_affine_field_exact(self):
        # general affine intensity field reproduced through a rotated target grid
        geom = GridGeometry.from_spacing((20, 20, 20), (1, 1, 1))
        pts = geom.voxel_centers()
        vals = (0.2 * pts[:, 0] - 0.1 * pts[:, 1] + 0.05 * pts[:, 2] + 1.0).astype(np.float32)
        grid = VoxelGrid(vals.reshape(20, 20, 20), geom.affine)

        th = 0.2
        rot = np.eye(4)
        rot[:2, :2] = [[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]]
        rot[:3, 3] = (8.0, 4.0, 6.0)
        target = GridGeometry((6, 6, 6), rot)
        out = resample(grid, target)
        tp = target.voxel_centers()
        expect = 0.2 * tp[:, 0] - 0.1 * tp[:, 1] + 0.05 * tp[:, 2] + 1.0
        np.testing.assert_allclose(out.data.ravel(), expect, atol=1e-4)

    def test_nearest_preserves_label_set(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 5, size=(10, 10, 10)).astype(np.int16)
        grid = VoxelGrid(labels, np.eye(4))
        target = GridGeometry.from_spacing((7, 9, 4), (1.3, 0.9, 2.1), origin=(0.1, 0.7, 0.2))
        out = resample(grid, target, mode="nearest")
        assert out.data.dtype == np.int16
        assert set(np.unique(out.data)) <= set(np.unique(labels)) | {0}

    def test_out_of_bounds_trilinear_is_zero(self):
        grid = VoxelGrid(np.ones((4, 4, 4), dtype=np.float32), np.eye(4))
        target = GridGeometry.from_spacing((4, 4, 4), (1, 1, 1), origin=(100.0, 0.0, 0.0))
        out = resample(grid, target)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_bad_mode(self):
        grid = VoxelGrid(np.ones((2, 2, 2), dtype=np.float32), np.eye(4))
        with pytest.raises(UsageError, match="mode"):
            resample(grid, grid.geometry, mode="cubic")
