"""Voxel volume data model and NIfTI-1 file I/O.

The on-disk format is NIfTI-1 single files (.nii, optionally gzipped), written
little-endian with the data block at byte offset 352. Only srow-based affines
are supported; quaternion (qform-only) orientation is rejected so that every
accepted file has one unambiguous voxel-to-world mapping. Element types are
uint8 (code 2), int16 (code 4) and float32 (code 16); float64 (code 64) files
are accepted on read and converted.

Gzip compression is detected by the 0x1F 0x8B magic bytes, not the file name.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InputFormatError, UsageError

_HDR_SIZE = 348
_MAGIC_SINGLE = b"n+1\x00"
_GZIP_MAGIC = b"\x1f\x8b"

# NIfTI-1 datatype code <-> numpy dtype (native byte order).
_DTYPE_OF_CODE = {2: np.uint8, 4: np.int16, 16: np.float32, 64: np.float64}
_CODE_OF_DTYPE = {np.dtype(np.uint8): 2, np.dtype(np.int16): 4, np.dtype(np.float32): 16}
_BITPIX = {2: 8, 4: 16, 16: 32, 64: 64}

_STORAGE_DTYPES = (np.uint8, np.int16, np.float32)


def _as_affine(affine) -> np.ndarray:
    out = np.array(affine, dtype=np.float64, copy=True)
    if out.shape != (4, 4):
        raise UsageError(f"affine must be 4x4, got shape {out.shape}")
    return out


@dataclass(frozen=True)
class GridGeometry:
    """Lattice shape plus voxel-index -> world-mm affine."""

    dims: tuple
    affine: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise UsageError(f"dims must be 3 positive integers, got {self.dims}")
        affine = _as_affine(self.affine)
        if not np.allclose(affine[3], (0.0, 0.0, 0.0, 1.0), atol=1e-9):
            raise UsageError("affine last row must be [0, 0, 0, 1]")
        if abs(np.linalg.det(affine[:3, :3])) < 1e-12:
            raise UsageError("affine is not invertible")
        affine.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "affine", affine)

    @classmethod
    def from_spacing(cls, dims, spacing, origin=(0.0, 0.0, 0.0)) -> "GridGeometry":
        spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), 3)
        affine = np.eye(4)
        affine[:3, :3] = np.diag(spacing)
        affine[:3, 3] = origin
        return cls(tuple(dims), affine)

    @property
    def spacing(self) -> np.ndarray:
        return np.linalg.norm(self.affine[:3, :3], axis=0)

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of all voxel centers, shape (n_voxels, 3), C index order."""
        nx, ny, nz = self.dims
        i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        idx = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1).astype(np.float64)
        return idx @ self.affine[:3, :3].T + self.affine[:3, 3]

    def world_to_index(self, points: np.ndarray) -> np.ndarray:
        inv = np.linalg.inv(self.affine)
        pts = np.asarray(points, dtype=np.float64)
        return pts @ inv[:3, :3].T + inv[:3, 3]


@dataclass(frozen=True)
class VoxelGrid:
    """A 3-D scalar volume with physical geometry.

    data is indexed [i, j, k] with i the x-fastest axis of the file layout;
    dtype is one of uint8, int16, float32. The array is made read-only so grids
    can be shared across threads.
    """

    data: np.ndarray
    affine: np.ndarray
    spacing: np.ndarray = field(default=None)

    def __post_init__(self):
        data = np.array(self.data, copy=True, order="C")
        if data.ndim != 3:
            raise UsageError(f"data must be 3-D, got {data.ndim}-D")
        if not any(data.dtype == np.dtype(t) for t in _STORAGE_DTYPES):
            raise UsageError(f"unsupported element type {data.dtype} (use uint8/int16/float32)")
        affine = _as_affine(self.affine)
        geom = GridGeometry(data.shape, affine)  # validates affine
        derived = geom.spacing
        if self.spacing is not None:
            given = np.asarray(self.spacing, dtype=np.float64)
            if np.any(np.abs(given - derived) > 1e-4 * np.maximum(derived, 1e-12)):
                raise UsageError(
                    f"spacing {given} inconsistent with affine column norms {derived}"
                )
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "affine", geom.affine)
        object.__setattr__(self, "spacing", derived)

    @property
    def dims(self) -> tuple:
        return self.data.shape

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.data.shape, self.affine)

    def same_geometry_as(self, other: "VoxelGrid", tol=1e-5) -> bool:
        return self.dims == other.dims and np.allclose(self.affine, other.affine, atol=tol)

    def with_data(self, data: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(data, self.affine)


@dataclass(frozen=True)
class NiftiHeader:
    """The subset of the 348-byte NIfTI-1 header this package reads and writes."""

    dim: tuple
    datatype: int
    bitpix: int
    pixdim: tuple
    vox_offset: float
    scl_slope: float
    scl_inter: float
    qform_code: int
    sform_code: int
    srow: np.ndarray  # (3, 4)
    magic: bytes


def _parse_header(raw: bytes) -> NiftiHeader:
    if len(raw) < _HDR_SIZE:
        raise InputFormatError(f"file too short for a NIfTI-1 header ({len(raw)} bytes)")

    # Byte order: dim[0] (number of dimensions) must be in 1..7 in the true order.
    dim0_le = struct.unpack_from("<h", raw, 40)[0]
    dim0_be = struct.unpack_from(">h", raw, 40)[0]
    if 1 <= dim0_le <= 7:
        bo = "<"
    elif 1 <= dim0_be <= 7:
        bo = ">"
    else:
        raise InputFormatError(f"cannot determine byte order (dim[0] = {dim0_le} / {dim0_be})")

    sizeof_hdr = struct.unpack_from(bo + "i", raw, 0)[0]
    if sizeof_hdr != _HDR_SIZE:
        raise InputFormatError(f"sizeof_hdr is {sizeof_hdr}, expected {_HDR_SIZE}")

    magic = raw[344:348]
    if magic != _MAGIC_SINGLE:
        raise InputFormatError(f"unsupported magic {magic!r} (only single-file 'n+1' volumes)")

    dim = struct.unpack_from(bo + "8h", raw, 40)
    datatype, bitpix = struct.unpack_from(bo + "2h", raw, 70)
    pixdim = struct.unpack_from(bo + "8f", raw, 76)
    vox_offset, scl_slope, scl_inter = struct.unpack_from(bo + "3f", raw, 108)
    qform_code, sform_code = struct.unpack_from(bo + "2h", raw, 252)
    srow = np.array(
        [
            struct.unpack_from(bo + "4f", raw, 280),
            struct.unpack_from(bo + "4f", raw, 296),
            struct.unpack_from(bo + "4f", raw, 312),
        ],
        dtype=np.float64,
    )
    hdr = NiftiHeader(
        dim=dim,
        datatype=datatype,
        bitpix=bitpix,
        pixdim=pixdim,
        vox_offset=float(vox_offset),
        scl_slope=float(scl_slope),
        scl_inter=float(scl_inter),
        qform_code=qform_code,
        sform_code=sform_code,
        srow=srow,
        magic=magic,
    )
    # Stash the detected byte order for the payload reader.
    object.__setattr__(hdr, "_byteorder", bo)
    return hdr


def _read_raw(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            head = fh.read(2)
            fh.seek(0)
            if head == _GZIP_MAGIC:
                with gzip.open(fh) as gz:
                    return gz.read()
            return fh.read()
    except OSError as exc:
        raise InputFormatError(f"{path}: {exc.strerror or exc}") from exc


def _header_affine(hdr: NiftiHeader) -> np.ndarray:
    affine = np.eye(4)
    if hdr.sform_code > 0:
        affine[:3, :] = hdr.srow
    elif hdr.qform_code > 0:
        raise InputFormatError(
            "quaternion (qform) orientation is not supported; provide an sform affine"
        )
    else:
        affine[:3, :3] = np.diag([abs(p) if p != 0 else 1.0 for p in hdr.pixdim[1:4]])
    return affine


def read_header(path) -> NiftiHeader:
    """Parse just the header of a NIfTI-1 file (gzip transparent)."""
    return _parse_header(_read_raw(path)[:_HDR_SIZE])


def read_volume(path, labels: bool = False) -> VoxelGrid:
    """Read a NIfTI-1 volume.

    Returns float32 data with scl_slope/scl_inter applied (slope 0 means 1).
    With labels=True the result is int16 and scaling must leave the values
    integral.
    """
    raw = _read_raw(path)
    hdr = _parse_header(raw)
    bo = hdr._byteorder

    if hdr.datatype not in _DTYPE_OF_CODE:
        raise InputFormatError(f"unsupported datatype code {hdr.datatype}")
    ndim = hdr.dim[0]
    dims = tuple(int(d) for d in hdr.dim[1 : 1 + min(ndim, 7)])
    if any(d < 1 for d in dims):
        raise InputFormatError(f"non-positive dimension in header: {dims}")
    if len(dims) > 3:
        if any(d != 1 for d in dims[3:]):
            raise InputFormatError(f"only 3-D volumes are supported, got dim={dims}")
        dims = dims[:3]
    while len(dims) < 3:
        dims = dims + (1,)

    dtype = np.dtype(_DTYPE_OF_CODE[hdr.datatype]).newbyteorder(bo)
    offset = int(hdr.vox_offset)
    if offset < _HDR_SIZE:
        raise InputFormatError(f"vox_offset {offset} overlaps the header")
    n = dims[0] * dims[1] * dims[2]
    nbytes = n * dtype.itemsize
    payload = raw[offset : offset + nbytes]
    if len(payload) < nbytes:
        raise InputFormatError(
            f"truncated payload: need {nbytes} bytes, file has {len(payload)}"
        )
    data = np.frombuffer(payload, dtype=dtype).astype(dtype.newbyteorder("="))
    data = np.ascontiguousarray(data.reshape(dims, order="F"))

    slope = hdr.scl_slope if (hdr.scl_slope != 0.0 and np.isfinite(hdr.scl_slope)) else 1.0
    inter = hdr.scl_inter if np.isfinite(hdr.scl_inter) else 0.0
    if slope != 1.0 or inter != 0.0:
        data = (data.astype(np.float64) * slope + inter).astype(np.float32)

    if labels:
        as_f = data.astype(np.float64)
        if not np.all(as_f == np.rint(as_f)):
            raise InputFormatError("volume holds non-integral values; cannot read as labels")
        if as_f.min() < np.iinfo(np.int16).min or as_f.max() > np.iinfo(np.int16).max:
            raise InputFormatError("label values exceed the int16 range")
        data = as_f.astype(np.int16)
    elif data.dtype != np.float32:
        data = data.astype(np.float32)

    return VoxelGrid(data, _header_affine(hdr))


def _cast_for_write(data: np.ndarray, code: int) -> np.ndarray:
    target = np.dtype(_DTYPE_OF_CODE[code])
    if data.dtype == target:
        return data
    info_min, info_max = {
        2: (0, 255),
        4: (np.iinfo(np.int16).min, np.iinfo(np.int16).max),
        16: (None, None),
    }[code]
    if info_min is not None:
        vals = np.rint(np.asarray(data, dtype=np.float64))
        if vals.min() < info_min or vals.max() > info_max:
            raise UsageError(
                f"values [{data.min()}, {data.max()}] do not fit datatype code {code}"
            )
        return vals.astype(target)
    return data.astype(target)


def write_volume(grid: VoxelGrid, path, datatype=None) -> None:
    """Write a NIfTI-1 single file: little-endian, sform affine, data at 352.

    datatype may be a NIfTI code (2/4/16), a numpy dtype, or None to keep the
    grid's own element type. A trailing .gz on the path gzips the output with a
    zeroed mtime so repeated writes are byte-identical.
    """
    if datatype is None:
        code = _CODE_OF_DTYPE[np.dtype(grid.data.dtype)]
    elif isinstance(datatype, int):
        code = datatype
    else:
        code = _CODE_OF_DTYPE.get(np.dtype(datatype))
    if code not in (2, 4, 16):
        raise UsageError(f"unsupported write datatype {datatype!r}")

    data = _cast_for_write(grid.data, code)

    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *grid.dims, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, code, _BITPIX[code])
    struct.pack_into("<8f", hdr, 76, 1.0, *[float(s) for s in grid.spacing], 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<3f", hdr, 108, 352.0, 1.0, 0.0)  # vox_offset, scl_slope, scl_inter
    descrip = b"cortexforge"
    struct.pack_into("<80s", hdr, 148, descrip)
    struct.pack_into("<2h", hdr, 252, 0, 1)  # qform_code=0, sform_code=1
    struct.pack_into("<4f", hdr, 280, *[float(v) for v in grid.affine[0]])
    struct.pack_into("<4f", hdr, 296, *[float(v) for v in grid.affine[1]])
    struct.pack_into("<4f", hdr, 312, *[float(v) for v in grid.affine[2]])
    hdr[344:348] = _MAGIC_SINGLE

    body = bytes(hdr) + b"\x00\x00\x00\x00" + data.astype(data.dtype.newbyteorder("<")).tobytes(order="F")

    if str(path).endswith(".gz"):
        with open(path, "wb") as fh:
            # empty filename + zero mtime keep repeated writes byte-identical
            with gzip.GzipFile(filename="", fileobj=fh, mode="wb", mtime=0) as gz:
                gz.write(body)
    else:
        with open(path, "wb") as fh:
            fh.write(body)


def resample(grid: VoxelGrid, target, mode: str = "trilinear", background=0) -> VoxelGrid:
    """Resample a volume onto a target lattice.

    Each target voxel center is mapped to source index space and interpolated:
    trilinear for intensities (out of bounds -> 0), nearest for labels (out of
    bounds -> background). The result carries the target geometry.
    """
    geom = target.geometry if isinstance(target, VoxelGrid) else target
    if not isinstance(geom, GridGeometry):
        geom = GridGeometry(*target)
    if mode not in ("trilinear", "nearest"):
        raise UsageError(f"unknown resample mode {mode!r}")

    # Map target index coords straight to source index coords in one affine.
    m = np.linalg.inv(grid.affine) @ geom.affine
    nx, ny, nz = geom.dims
    i = np.arange(nx, dtype=np.float64)[:, None, None]
    j = np.arange(ny, dtype=np.float64)[None, :, None]
    k = np.arange(nz, dtype=np.float64)[None, None, :]
    coords = [m[d, 0] * i + m[d, 1] * j + m[d, 2] * k + m[d, 3] for d in range(3)]

    if mode == "trilinear":
        out = ndimage.map_coordinates(
            grid.data.astype(np.float64), coords, order=1, mode="constant", cval=0.0
        ).astype(np.float32)
    else:
        out = ndimage.map_coordinates(
            grid.data, coords, order=0, mode="constant", cval=background
        )
    return VoxelGrid(out, geom.affine)
