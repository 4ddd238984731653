"""Domain-randomized synthesis of low-field-like images with SDF targets.

A label volume plus reference white/pial meshes go through a fixed corruption
chain: ablation, a random affine+diffeomorphic warp (applied identically to
labels and meshes), per-label Gaussian intensities, a multiplicative bias
field, then resolution simulation with additive noise. Every stage draws from
a counter-based substream keyed by (seed, stage id), so outputs are a pure
function of (inputs, seed) regardless of call order or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
import json

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from .errors import InputFormatError, UsageError
from .mesh.model import TriangleMesh
from .sdf import SdfVolume, mesh_to_sdf
from .volio import GridGeometry, VoxelGrid

ABLATION_MODES = (
    "full",
    "no-extracerebral",
    "no-cerebellum-brainstem",
    "left-hemi",
    "right-hemi",
)

SCHEMA_CLASSES = (
    "extracerebral",
    "cerebellum-brainstem",
    "left",
    "right",
    "midline",
    "background",
)

# slice axis 2: axial stacks vary along z
ACQUISITION_PRESETS = {
    "hyperfine-axial": {"inplane_mm": 1.6, "slice_mm": 5.0, "axis": 2},
    "iso2": {"iso_mm": 2.0},
    "iso3": {"iso_mm": 3.0},
    "iso4": {"iso_mm": 4.0},
    "postmortem-2.3": {"inplane_mm": 2.30, "slice_mm": 2.31, "axis": 2},
}

# substream ids; renumbering breaks seed reproducibility across versions
_OP_ABLATE = 0
_OP_AFFINE = 1
_OP_SVF = 2
_OP_GMM = 3
_OP_BIAS = 4
_OP_ACQUISITION = 5
_OP_NOISE = 6

_FWHM_TO_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))  # 2.3548...


def substream(seed: int, op_id: int) -> np.random.Generator:
    """Independent generator for one pipeline stage of one sample."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise UsageError(f"seed must be an unsigned 64-bit integer, got {seed}")
    key = np.array([seed, op_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _pair(name, value, lo_floor=None):
    arr = tuple(float(v) for v in value)
    if len(arr) != 2 or not np.all(np.isfinite(arr)):
        raise UsageError(f"{name} must be a finite [lo, hi] pair, got {value!r}")
    if arr[0] > arr[1]:
        raise UsageError(f"{name}: lo {arr[0]} exceeds hi {arr[1]}")
    if lo_floor is not None and arr[0] < lo_floor:
        raise UsageError(f"{name}: values below {lo_floor} not allowed, got {arr[0]}")
    return arr


@dataclass(frozen=True)
class GeneratorConfig:
    """Randomization ranges for the synthesis chain.

    noise_std_range is in percent of the normalized intensity range (so the
    default [0, 15] means noise std up to 0.15 on [0, 1] images).
    """

    rotation_max_deg: float = 40.0
    translation_max_mm: float = 20.0
    scale_range: tuple = (0.8, 1.2)
    svf_sigma_mm: float = 6.0
    svf_grid: int = 10
    gmm_mean_range: tuple = (0.0, 255.0)
    gmm_std_range: tuple = (0.0, 35.0)
    bias_log_max: float = 1.0
    bias_grid: int = 4
    noise_std_range: tuple = (0.0, 15.0)
    inplane_spacing_range_mm: tuple = (1.0, 2.0)
    slice_spacing_range_mm: tuple = (1.0, 5.0)
    iso_spacing_range_mm: tuple = (1.0, 4.0)
    ablation_probs: dict = field(
        default_factory=lambda: {
            "full": 0.5,
            "no-extracerebral": 0.2,
            "no-cerebellum-brainstem": 0.1,
            "left-hemi": 0.1,
            "right-hemi": 0.1,
        }
    )

    def __post_init__(self):
        for name in ("rotation_max_deg", "translation_max_mm", "svf_sigma_mm", "bias_log_max"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise UsageError(f"{name} must be a nonnegative real, got {v}")
            object.__setattr__(self, name, v)
        for name in ("svf_grid", "bias_grid"):
            v = int(getattr(self, name))
            if v < 2:
                raise UsageError(f"{name} must be at least 2 control points, got {v}")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "scale_range", _pair("scale_range", self.scale_range, 1e-6))
        object.__setattr__(self, "gmm_mean_range", _pair("gmm_mean_range", self.gmm_mean_range))
        object.__setattr__(self, "gmm_std_range", _pair("gmm_std_range", self.gmm_std_range, 0.0))
        object.__setattr__(self, "noise_std_range", _pair("noise_std_range", self.noise_std_range, 0.0))
        for name in ("inplane_spacing_range_mm", "slice_spacing_range_mm", "iso_spacing_range_mm"):
            object.__setattr__(self, name, _pair(name, getattr(self, name), 1.0))
        probs = dict(self.ablation_probs)
        if set(probs) != set(ABLATION_MODES):
            raise UsageError(
                f"ablation_probs must cover exactly {sorted(ABLATION_MODES)}, "
                f"got {sorted(probs)}"
            )
        vals = np.array([float(probs[m]) for m in ABLATION_MODES])
        if np.any(vals < 0) or abs(vals.sum() - 1.0) > 1e-9:
            raise UsageError(f"ablation_probs must be nonnegative and sum to 1, got {probs}")
        object.__setattr__(self, "ablation_probs", {m: float(probs[m]) for m in ABLATION_MODES})

    @classmethod
    def identity(cls) -> "GeneratorConfig":
        """No randomization: useful as a regression baseline."""
        return cls(
            rotation_max_deg=0.0,
            translation_max_mm=0.0,
            scale_range=(1.0, 1.0),
            svf_sigma_mm=0.0,
            gmm_std_range=(0.0, 0.0),
            bias_log_max=0.0,
            noise_std_range=(0.0, 0.0),
            inplane_spacing_range_mm=(1.0, 1.0),
            slice_spacing_range_mm=(1.0, 1.0),
            iso_spacing_range_mm=(1.0, 1.0),
            ablation_probs={
                "full": 1.0,
                "no-extracerebral": 0.0,
                "no-cerebellum-brainstem": 0.0,
                "left-hemi": 0.0,
                "right-hemi": 0.0,
            },
        )

    @classmethod
    def from_json(cls, path) -> "GeneratorConfig":
        try:
            with open(str(path)) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputFormatError(f"{path}: cannot read generator config: {exc}") from exc
        return cls.from_dict(doc, source=str(path))

    @classmethod
    def from_dict(cls, doc: dict, source: str = "config") -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InputFormatError(f"{source}: unknown config fields {sorted(unknown)}")
        try:
            return cls(**doc)
        except UsageError as exc:
            raise InputFormatError(f"{source}: {exc}") from exc

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


@dataclass(frozen=True)
class DeformationField:
    """Dense displacement in mm, one 3-vector per voxel of a lattice."""

    displacement: np.ndarray
    affine: np.ndarray

    def __post_init__(self):
        disp = np.asarray(self.displacement, dtype=np.float32)
        if disp.ndim != 4 or disp.shape[3] != 3:
            raise UsageError(f"displacement must be (nx, ny, nz, 3), got {disp.shape}")
        if not np.all(np.isfinite(disp)):
            raise UsageError("displacement contains non-finite values")
        disp = np.ascontiguousarray(disp)
        disp.setflags(write=False)
        object.__setattr__(self, "displacement", disp)
        object.__setattr__(self, "affine", GridGeometry(disp.shape[:3], self.affine).affine)

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.displacement.shape[:3], self.affine)

    def sample_at(self, points: np.ndarray) -> np.ndarray:
        """Trilinear displacement (mm) at world points; clamped at the border."""
        idx = self.geometry.world_to_index(np.asarray(points, dtype=np.float64))
        coords = [idx[:, d] for d in range(3)]
        out = np.empty((len(idx), 3))
        for c in range(3):
            out[:, c] = ndimage.map_coordinates(
                self.displacement[..., c].astype(np.float64), coords, order=1, mode="nearest"
            )
        return out


def sample_affine(config: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    """Random rotation, translation, and per-axis scale about the origin.

    Draw order (rotation, translation, scale) is part of the seed contract.
    """
    angles = rng.uniform(-config.rotation_max_deg, config.rotation_max_deg, 3)
    shift = rng.uniform(-config.translation_max_mm, config.translation_max_mm, 3)
    scale = rng.uniform(config.scale_range[0], config.scale_range[1], 3)
    M = np.eye(4)
    M[:3, :3] = Rotation.from_euler("xyz", angles, degrees=True).as_matrix() * scale
    M[:3, 3] = shift
    return M


def sample_svf(config: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    """Stationary velocity control grid: one smoothness draw, then iid normals.

    The outermost control ring stays zero, so the velocity ramps off over one
    control cell and the flow never leaves the lattice: the integrated map and
    its inverse (from -v) then compose to identity everywhere, not just deep
    in the interior.
    """
    sigma = rng.uniform(0.0, config.svf_sigma_mm)
    g = config.svf_grid
    out = np.zeros((g, g, g, 3))
    if sigma > 0:
        out[1:-1, 1:-1, 1:-1] = rng.normal(0.0, sigma, (g - 2, g - 2, g - 2, 3))
    return out


def _upsample_control(control: np.ndarray, dims, order: int = 1) -> np.ndarray:
    """Stretch a control lattice so it spans the full index range."""
    nx, ny, nz = dims
    g = control.shape[:3]
    i = np.arange(nx)[:, None, None] * ((g[0] - 1) / max(nx - 1, 1)) * np.ones((1, ny, nz))
    j = np.arange(ny)[None, :, None] * ((g[1] - 1) / max(ny - 1, 1)) * np.ones((nx, 1, nz))
    k = np.arange(nz)[None, None, :] * ((g[2] - 1) / max(nz - 1, 1)) * np.ones((nx, ny, 1))
    coords = [i, j, k]
    if control.ndim == 3:
        return ndimage.map_coordinates(control, coords, order=order, mode="nearest")
    out = np.empty((nx, ny, nz, control.shape[3]))
    for c in range(control.shape[3]):
        out[..., c] = ndimage.map_coordinates(control[..., c], coords, order=order, mode="nearest")
    return out


def integrate_svf(velocity: np.ndarray, geometry: GridGeometry, steps: int = 8) -> DeformationField:
    """Exponentiate a stationary velocity field by scaling and squaring.

    The control grid (g, g, g, 3), in mm, is stretched over the lattice with
    cubic B-spline interpolation, divided by 2**steps, then self-composed
    steps times. The smooth upsampling matters: interpolation kinks between
    control cells otherwise dominate the error budget and break inverse
    consistency between v and -v. Border samples clamp, so a constant
    velocity integrates to exactly that constant displacement.
    """
    vel = np.asarray(velocity, dtype=np.float64)
    if vel.ndim != 4 or vel.shape[3] != 3:
        raise UsageError(f"velocity must be (g, g, g, 3), got {vel.shape}")
    if not np.all(np.isfinite(vel)):
        raise UsageError("velocity contains non-finite values")
    if steps < 1:
        raise UsageError(f"steps must be >= 1, got {steps}")

    dims = tuple(geometry.dims)
    phi = _upsample_control(vel, dims, order=3) / float(2**steps)
    if not phi.any():
        return DeformationField(np.zeros(dims + (3,), dtype=np.float32), geometry.affine)

    inv3 = np.linalg.inv(geometry.affine)[:3, :3]
    base = np.meshgrid(
        np.arange(dims[0], dtype=np.float64),
        np.arange(dims[1], dtype=np.float64),
        np.arange(dims[2], dtype=np.float64),
        indexing="ij",
    )
    for _ in range(steps):
        # phi_next(x) = phi(x) + phi(x + phi(x)), sampled in index space
        off = np.einsum("dc,...c->...d", inv3, phi)
        coords = [base[d] + off[..., d] for d in range(3)]
        sampled = np.empty_like(phi)
        for c in range(3):
            sampled[..., c] = ndimage.map_coordinates(
                phi[..., c], coords, order=1, mode="nearest"
            )
        phi = phi + sampled
    return DeformationField(phi.astype(np.float32), geometry.affine)


def warp_mesh(mesh: TriangleMesh, matrix=None, field: DeformationField = None) -> TriangleMesh:
    """Forward-map vertices: displacement first, then the affine."""
    v = mesh.vertices
    if field is not None:
        v = v + field.sample_at(v)
    out = TriangleMesh(v, mesh.triangles)
    return out.transformed(matrix) if matrix is not None else out


def deform_labels(labels: VoxelGrid, affine=None, field: DeformationField = None) -> VoxelGrid:
    """Nearest-neighbor pullback of a label volume.

    For each output voxel at world y the source point is p + field(p) with
    p = affine @ y, so `affine` and `field` must be the INVERSE of the forward
    map used on meshes (pass the negated velocity's integral for the field).
    """
    if labels.data.dtype.kind not in "iu":
        raise UsageError(f"labels must be integer-valued, got {labels.data.dtype}")
    geom = labels.geometry
    pts = geom.voxel_centers()
    if affine is not None:
        A = np.asarray(affine, dtype=np.float64)
        pts = pts @ A[:3, :3].T + A[:3, 3]
    if field is not None:
        pts = pts + field.sample_at(pts)
    idx = geom.world_to_index(pts)
    coords = [idx[:, d].reshape(geom.dims) for d in range(3)]
    out = ndimage.map_coordinates(labels.data, coords, order=0, mode="constant", cval=0)
    return VoxelGrid(out, labels.affine)


def sample_gmm_image(
    labels: VoxelGrid,
    rng: np.random.Generator,
    config: GeneratorConfig,
    overrides: dict = None,
    normalize: bool = True,
) -> VoxelGrid:
    """Per-label Gaussian intensities, min-max normalized to [0, 1].

    (mu, sigma) pairs are drawn per label in ascending label order; overrides
    replace drawn values afterwards, so the random stream does not shift when
    a test pins one label's parameters.
    """
    # empty volumes cannot exist: VoxelGrid rejects zero-size dims upstream
    if labels.data.dtype.kind not in "iu":
        raise UsageError(f"labels must be integer-valued, got {labels.data.dtype}")
    present = np.unique(labels.data)
    params = {}
    for lab in present:
        mu = rng.uniform(*config.gmm_mean_range)
        sd = rng.uniform(*config.gmm_std_range)
        params[int(lab)] = (mu, sd)
    if overrides:
        for lab, (mu, sd) in overrides.items():
            params[int(lab)] = (float(mu), float(sd))

    mu_map = np.zeros(int(present.max()) + 1)
    sd_map = np.zeros(int(present.max()) + 1)
    for lab, (mu, sd) in params.items():
        mu_map[lab] = mu
        sd_map[lab] = sd
    z = rng.standard_normal(labels.dims)
    img = mu_map[labels.data] + sd_map[labels.data] * z
    if normalize:
        lo, hi = img.min(), img.max()
        img = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    return VoxelGrid(img.astype(np.float32), labels.affine)


def apply_bias_field(
    image: VoxelGrid,
    rng: np.random.Generator,
    config: GeneratorConfig,
    return_field: bool = False,
):
    """Multiply by exp(log-bias), log-bias trilinear from a coarse U(-B, B) grid.

    Interpolation keeps the log field inside [-B, B], so the voxelwise output
    to input ratio is bounded by [exp(-B), exp(B)].
    """
    if not np.all(np.isfinite(image.data)):
        raise UsageError("image contains non-finite values")
    B = config.bias_log_max
    g = config.bias_grid
    control = rng.uniform(-B, B, (g, g, g))
    bias = np.exp(_upsample_control(control, image.dims))
    out = VoxelGrid((image.data.astype(np.float64) * bias).astype(np.float32), image.affine)
    return (out, bias) if return_field else out


def _acq_spacing(acq: dict) -> np.ndarray:
    if "iso_mm" in acq:
        return np.full(3, float(acq["iso_mm"]))
    try:
        axis = int(acq["axis"])
        inplane, sl = float(acq["inplane_mm"]), float(acq["slice_mm"])
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(
            f"acquisition dict needs iso_mm or (inplane_mm, slice_mm, axis), got {acq!r}"
        ) from exc
    if axis not in (0, 1, 2):
        raise UsageError(f"slice axis must be 0, 1, or 2, got {axis}")
    spacing = np.full(3, inplane)
    spacing[axis] = sl
    return spacing


def sample_acquisition(config: GeneratorConfig, rng: np.random.Generator) -> dict:
    """Coin-flip isotropic vs thick-slice, then spacings from config ranges."""
    if rng.uniform() < 0.5:
        return {"iso_mm": float(rng.uniform(*config.iso_spacing_range_mm))}
    return {
        "inplane_mm": float(rng.uniform(*config.inplane_spacing_range_mm)),
        "slice_mm": float(rng.uniform(*config.slice_spacing_range_mm)),
        "axis": int(rng.integers(0, 3)),
    }


def _resample_clamped(data: np.ndarray, src: GridGeometry, dst: GridGeometry) -> np.ndarray:
    """Trilinear resample with border clamp, so constants survive exactly."""
    m = np.linalg.inv(src.affine) @ dst.affine
    nx, ny, nz = dst.dims
    i = np.arange(nx, dtype=np.float64)[:, None, None]
    j = np.arange(ny, dtype=np.float64)[None, :, None]
    k = np.arange(nz, dtype=np.float64)[None, None, :]
    coords = [m[d, 0] * i + m[d, 1] * j + m[d, 2] * k + m[d, 3] for d in range(3)]
    return ndimage.map_coordinates(data, coords, order=1, mode="nearest")


def simulate_resolution(
    image: VoxelGrid,
    acq: dict,
    rng: np.random.Generator,
    config: GeneratorConfig,
    noise_std: float = None,
) -> VoxelGrid:
    """Blur, subsample, add noise, then interpolate back to the input lattice.

    The blur FWHM per axis equals the target spacing; axes already at the
    native spacing pass through unblurred. Noise std (fraction of the
    normalized intensity range) is drawn from config unless given explicitly.
    Output is clipped to [-0.2, 1.2] and keeps the input grid geometry.
    """
    spacing = _acq_spacing(acq)
    native = image.spacing
    if np.any(spacing < native - 1e-9):
        raise UsageError(
            f"target spacing {spacing} below native {native} mm is not an acquisition"
        )
    data = image.data.astype(np.float64)
    for axis in range(3):
        if spacing[axis] > native[axis] + 1e-9:
            sigma_vox = spacing[axis] / _FWHM_TO_SIGMA / native[axis]
            data = ndimage.gaussian_filter1d(data, sigma_vox, axis=axis, mode="nearest")

    # target centers stay inside the source hull so clamping is a no-op there
    src = image.geometry
    step = spacing / native
    low_dims = tuple(int(np.floor((src.dims[d] - 1) / step[d])) + 1 for d in range(3))
    low_geom = GridGeometry(low_dims, src.affine @ np.diag([step[0], step[1], step[2], 1.0]))
    low = _resample_clamped(data, src, low_geom)

    if noise_std is None:
        noise_std = rng.uniform(*config.noise_std_range) / 100.0
    if noise_std > 0:
        low = low + rng.normal(0.0, noise_std, low.shape)

    out = _resample_clamped(low, low_geom, src)
    return VoxelGrid(np.clip(out, -0.2, 1.2).astype(np.float32), image.affine)


def load_label_schema(path) -> dict:
    """Read a label schema JSON: {"<int label>": {name, class}}."""
    try:
        with open(str(path)) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputFormatError(f"{path}: cannot read label schema: {exc}") from exc
    return parse_label_schema(doc, source=str(path))


def parse_label_schema(doc: dict, source: str = "schema") -> dict:
    out = {}
    for key, entry in doc.items():
        try:
            lab = int(key)
        except (TypeError, ValueError):
            raise InputFormatError(f"{source}: label {key!r} is not an integer") from None
        cls = entry.get("class")
        if cls not in SCHEMA_CLASSES:
            raise InputFormatError(
                f"{source}: label {lab} has unknown class {cls!r} "
                f"(expected one of {sorted(SCHEMA_CLASSES)})"
            )
        out[lab] = {"name": str(entry.get("name", f"label-{lab}")), "class": cls}
    if not out:
        raise InputFormatError(f"{source}: schema is empty")
    return out


def _labels_of_class(schema: dict, cls: str) -> list:
    return [lab for lab, entry in schema.items() if entry["class"] == cls]


def ablate(labels: VoxelGrid, mode: str, schema: dict) -> VoxelGrid:
    """Zero out the label classes excluded by the acquisition mode."""
    if mode not in ABLATION_MODES:
        raise UsageError(f"unknown ablation mode {mode!r} (expected one of {ABLATION_MODES})")
    if labels.data.dtype.kind not in "iu":
        raise UsageError(f"labels must be integer-valued, got {labels.data.dtype}")
    drop = {
        "full": [],
        "no-extracerebral": ["extracerebral"],
        "no-cerebellum-brainstem": ["cerebellum-brainstem"],
        "left-hemi": ["right"],
        "right-hemi": ["left"],
    }[mode]
    if not drop:
        return labels
    bg_labels = _labels_of_class(schema, "background")
    background = bg_labels[0] if bg_labels else 0
    data = np.array(labels.data)
    for cls in drop:
        for lab in _labels_of_class(schema, cls):
            data[data == lab] = background
    return VoxelGrid(data, labels.affine)


@dataclass(frozen=True)
class SynthSample:
    """One synthesized training pair plus the provenance that produced it."""

    image: VoxelGrid
    white_sdf: SdfVolume
    pial_sdf: SdfVolume
    white_mesh: TriangleMesh
    pial_mesh: TriangleMesh
    transform: dict
    seed: int

    def transform_matrix(self) -> np.ndarray:
        return np.asarray(self.transform["matrix"], dtype=np.float64)


def generate_sample(
    labels: VoxelGrid,
    white_mesh: TriangleMesh,
    pial_mesh: TriangleMesh,
    schema: dict,
    config: GeneratorConfig,
    seed: int,
    clip_mm: float = 5.0,
    acq: dict = None,
) -> SynthSample:
    """Run the full corruption chain for one seed.

    Labels and meshes receive the same forward map G(x) = M (x + phi(x)):
    meshes by direct vertex evaluation, labels by pullback through the
    inverse (the negated velocity integrates to the inverse displacement).
    Pass acq to pin the acquisition (e.g. a preset) instead of sampling it.
    """
    geom = labels.geometry

    mode = ABLATION_MODES[
        substream(seed, _OP_ABLATE).choice(
            len(ABLATION_MODES), p=[config.ablation_probs[m] for m in ABLATION_MODES]
        )
    ]
    ablated = ablate(labels, mode, schema)

    # rotate about the volume center so anatomy stays in the field of view
    M = sample_affine(config, substream(seed, _OP_AFFINE))
    center = geom.voxel_centers().reshape(*geom.dims, 3)[
        tuple((d - 1) // 2 for d in geom.dims)
    ]
    T, Tinv = np.eye(4), np.eye(4)
    T[:3, 3] = center
    Tinv[:3, 3] = -center
    M = T @ M @ Tinv

    velocity = sample_svf(config, substream(seed, _OP_SVF))
    if velocity.any():
        phi_fwd = integrate_svf(velocity, geom)
        phi_inv = integrate_svf(-velocity, geom)
    else:
        phi_fwd = phi_inv = None

    identity_map = phi_fwd is None and np.allclose(M, np.eye(4), atol=0.0)
    if identity_map:
        labels_t, white_t, pial_t = ablated, white_mesh, pial_mesh
    else:
        labels_t = deform_labels(ablated, affine=np.linalg.inv(M), field=phi_inv)
        white_t = warp_mesh(white_mesh, matrix=M, field=phi_fwd)
        pial_t = warp_mesh(pial_mesh, matrix=M, field=phi_fwd)

    image = sample_gmm_image(labels_t, substream(seed, _OP_GMM), config)
    image = apply_bias_field(image, substream(seed, _OP_BIAS), config)
    if acq is None:
        acq = sample_acquisition(config, substream(seed, _OP_ACQUISITION))
    else:
        spacing = _acq_spacing(acq)  # validate before running the chain
        acq = (
            {"iso_mm": float(spacing[0])}
            if "iso_mm" in acq
            else {k: acq[k] for k in ("inplane_mm", "slice_mm", "axis")}
        )
    image = simulate_resolution(image, acq, substream(seed, _OP_NOISE), config)

    white_sdf = mesh_to_sdf(white_t, geom, clip_mm=clip_mm)
    pial_sdf = mesh_to_sdf(pial_t, geom, clip_mm=clip_mm)

    transform = {
        "matrix": np.asarray(M, dtype=np.float64).tolist(),
        "svf_control": velocity.tolist() if velocity.any() else None,
        "ablation": mode,
        "acquisition": {k: acq[k] for k in sorted(acq)},
    }
    return SynthSample(
        image=image,
        white_sdf=white_sdf,
        pial_sdf=pial_sdf,
        white_mesh=white_t,
        pial_mesh=pial_t,
        transform=transform,
        seed=int(seed),
    )
