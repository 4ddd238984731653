"""Batch command-line front end.

Five subcommands cover the library's main workflows:

    synth     labels + meshes -> degraded image, SDF targets, provenance
    recon     SDF volumes (or oracle meshes) -> corrected white/pial surfaces
    morph     white/pial surfaces [+ labels] -> morphometry CSV
    eval      surface / label / series comparisons -> metrics JSON
    pipeline  subject directory in, FreeSurfer-style surf/ + stats/ out

Exit codes follow the exception taxonomy in :mod:`cortexforge.errors`:
0 success, 2 usage, 3 input format, 4 geometry/topology, 5 internal.

Every command writes a ``provenance.json`` whose ``config_hash`` digests the
run parameters (never file paths or the thread count), so two runs with the
same hash produce byte-identical outputs.
"""

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import traceback

import numpy as np

from . import __version__, metrics, morpho, parcel, synth
from .errors import CortexForgeError, InputFormatError, UsageError
from .mesh import (
    expand_pial,
    marching_cubes,
    read_mesh,
    refine_to_sdf,
    topology_correct,
    topology_report,
    write_mesh,
)
from .sdf import SdfVolume, mesh_to_sdf
from .volio import GridGeometry, read_volume, write_volume

_REFINE_DEFAULTS = {
    "step_mm": 0.1,
    "iters": 100,
    "lambda_smooth": 0.1,
    "clip_mm": 5.0,
}


# ---------------------------------------------------------------------------
# small shared helpers


def _ensure_dir(path) -> str:
    path = str(path)
    os.makedirs(path, exist_ok=True)
    return path


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _config_hash(params) -> str:
    return hashlib.sha256(_canonical(params).encode("ascii")).hexdigest()


def _write_json(path, obj) -> None:
    with open(str(path), "wt") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {path}")


def _load_json(path):
    try:
        with open(str(path), "rt") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputFormatError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: invalid JSON ({exc})") from exc


def _provenance(command: str, params: dict, **extra) -> dict:
    prov = {
        "tool": "cortexforge",
        "version": __version__,
        "command": command,
        "parameters": params,
        "config_hash": _config_hash(params),
    }
    prov.update(extra)
    return prov


def _configure_threads(requested) -> int:
    if requested is None:
        raw = os.environ.get("CORTEXFORGE_THREADS", "1")
        try:
            requested = int(raw)
        except ValueError:
            raise UsageError(
                f"CORTEXFORGE_THREADS must be an integer, got {raw!r}"
            ) from None
    if requested < 1:
        raise UsageError("thread count must be >= 1")
    import numba

    threads = min(int(requested), numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(threads)
    return threads


def _refine_params(path) -> dict:
    """Refinement settings from a JSON config file, defaults filled in."""
    params = dict(_REFINE_DEFAULTS)
    if path is None:
        return params
    raw = _load_json(path)
    if not isinstance(raw, dict):
        raise InputFormatError(f"{path}: refinement config must be a JSON object")
    unknown = sorted(set(raw) - set(params))
    if unknown:
        raise InputFormatError(
            f"{path}: unknown config fields: {', '.join(unknown)}"
        )
    for key, val in raw.items():
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise InputFormatError(f"{path}: {key} must be a number")
        params[key] = val
    params["iters"] = int(params["iters"])
    return params


def _write_grid(grid, path) -> None:
    write_volume(grid, str(path))
    print(f"wrote {path}")


def _write_surface(mesh, path) -> None:
    write_mesh(mesh, str(path))
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    config = (
        synth.GeneratorConfig.from_json(args.config)
        if args.config
        else synth.GeneratorConfig()
    )
    labels = read_volume(args.labels, labels=True)
    schema = synth.load_label_schema(args.schema)
    white = read_mesh(args.white)
    pial = read_mesh(args.pial)
    acq = dict(synth.ACQUISITION_PRESETS[args.preset]) if args.preset else None

    sample = synth.generate_sample(
        labels,
        white,
        pial,
        schema,
        config,
        seed=args.seed,
        clip_mm=args.clip_mm,
        acq=acq,
    )

    out = _ensure_dir(args.output_dir)
    stem = args.stem
    _write_grid(sample.image, os.path.join(out, f"{stem}.image.nii.gz"))
    _write_grid(sample.white_sdf.grid, os.path.join(out, f"{stem}.white.sdf.nii.gz"))
    _write_grid(sample.pial_sdf.grid, os.path.join(out, f"{stem}.pial.sdf.nii.gz"))
    _write_surface(sample.white_mesh, os.path.join(out, f"{stem}.white.off"))
    _write_surface(sample.pial_mesh, os.path.join(out, f"{stem}.pial.off"))

    params = {
        "seed": args.seed,
        "clip_mm": args.clip_mm,
        "config": config.to_dict(),
        "acquisition_preset": args.preset,
    }
    spacing = synth._acq_spacing(sample.transform["acquisition"])
    prov = _provenance(
        "synth",
        params,
        acquisition=sample.transform["acquisition"],
        acquisition_spacing_mm=[float(s) for s in spacing],
        transform={
            "matrix": sample.transform["matrix"],
            "svf_control": sample.transform["svf_control"],
            "ablation": sample.transform["ablation"],
        },
        inputs={
            "labels": os.path.basename(args.labels),
            "schema": os.path.basename(args.schema),
            "white": os.path.basename(args.white),
            "pial": os.path.basename(args.pial),
        },
    )
    _write_json(os.path.join(out, "provenance.json"), prov)
    return 0


# ---------------------------------------------------------------------------
# recon


def _load_sdf(path, clip_mm) -> SdfVolume:
    return SdfVolume(read_volume(str(path)), clip_mm=clip_mm)


def _report_dict(report) -> dict:
    return dataclasses.asdict(report)


def _extract_corrected(sdf: SdfVolume):
    """Genus-0 extraction with a before/after topology record.

    The raw level set is extracted first; if it is already a single closed
    genus-0 manifold the original SDF is kept (a rebuild would only lose
    sub-voxel accuracy). Otherwise the volume goes through topology repair
    and is re-extracted from the rebuilt SDF.
    """
    mesh = marching_cubes(sdf)
    before = topology_report(mesh)
    if before.genus == 0 and before.n_components == 1 and before.closed_manifold:
        return sdf, mesh, before, before
    fixed = topology_correct(sdf)
    mesh = marching_cubes(fixed)
    after = topology_report(mesh)
    return fixed, mesh, before, after


def _topology_block(before, after) -> dict:
    return {
        "before": _report_dict(before),
        "after": _report_dict(after),
        "corrected": before is not after,
        "handles_removed": int(round(before.genus - after.genus)),
        "components_removed": int(before.n_components - after.n_components),
    }


def _reconstruct(white_sdf: SdfVolume, pial_sdf: SdfVolume, refine: dict):
    """Shared recon core: correct, extract, refine white, expand pial."""
    if not white_sdf.grid.same_geometry_as(pial_sdf.grid):
        raise UsageError("white and pial SDF volumes must share one lattice")
    opts = {k: refine[k] for k in ("step_mm", "iters", "lambda_smooth")}

    wsdf, wmesh, wbefore, wafter = _extract_corrected(white_sdf)
    white = refine_to_sdf(wmesh, wsdf, **opts)

    psdf, _, pbefore, pafter = _extract_corrected(pial_sdf)
    pial = expand_pial(white, psdf, **opts)

    topo = {
        "white": _topology_block(wbefore, wafter),
        "pial": _topology_block(pbefore, pafter),
    }
    return white, pial, topo


def _recon_inputs(args, clip):
    """Resolve the two SDF volumes from either input mode."""
    sdf_mode = args.white_sdf or args.pial_sdf
    mesh_mode = args.white or args.pial
    if sdf_mode and mesh_mode:
        raise UsageError("pass either SDF volumes or oracle meshes, not both")
    if sdf_mode:
        if not args.white_sdf:
            raise UsageError("missing --white-sdf (the white SDF volume)")
        if not args.pial_sdf:
            raise UsageError("missing --pial-sdf (the pial SDF volume)")
        return _load_sdf(args.white_sdf, clip), _load_sdf(args.pial_sdf, clip)
    if mesh_mode:
        if not args.white:
            raise UsageError("missing --white (the white oracle mesh)")
        if not args.pial:
            raise UsageError("missing --pial (the pial oracle mesh)")
        if args.dims is None:
            raise UsageError("oracle mode needs --dims for the SDF lattice")
        geom = GridGeometry.from_spacing(args.dims, args.spacing, args.origin)
        white = mesh_to_sdf(read_mesh(args.white), geom, clip_mm=clip)
        pial = mesh_to_sdf(read_mesh(args.pial), geom, clip_mm=clip)
        return white, pial
    raise UsageError(
        "no inputs: pass --white-sdf/--pial-sdf volumes "
        "or --white/--pial meshes with --dims"
    )


def cmd_recon(args) -> int:
    refine = _refine_params(args.config)
    white_sdf, pial_sdf = _recon_inputs(args, refine["clip_mm"])
    white, pial, topo = _reconstruct(white_sdf, pial_sdf, refine)

    out = _ensure_dir(args.output_dir)
    prefix = args.prefix
    _write_surface(white, os.path.join(out, f"{prefix}white.off"))
    _write_surface(pial, os.path.join(out, f"{prefix}pial.off"))
    _write_json(os.path.join(out, f"{prefix}topology.json"), topo)

    params = {"refine": refine, "mode": "oracle" if args.white else "sdf"}
    prov = _provenance("recon", params, topology=topo)
    _write_json(os.path.join(out, f"{prefix}provenance.json"), prov)
    return 0


# ---------------------------------------------------------------------------
# morph


def _morph_records(white, pial, region_labels=None, table_path=None):
    """Morphometry rows, grouped to lobes when region labels are given."""
    labels = grouping = None
    unknown = None
    if region_labels is not None:
        table = (
            parcel.LabelTable.from_json(table_path)
            if table_path
            else parcel.LabelTable.default()
        )
        labels, unknown = parcel.group_to_lobes(region_labels, table)
        grouping = dict(parcel.LOBE_NAMES)
    records = morpho.morphometry_table(white, pial, labels=labels, grouping=grouping)
    return records, unknown


def cmd_morph(args) -> int:
    white = read_mesh(args.white)
    pial = read_mesh(args.pial)
    region_labels = (
        parcel.read_labels(args.labels, n_vertices=white.n_vertices)
        if args.labels
        else None
    )
    records, unknown = _morph_records(white, pial, region_labels, args.table)

    out = _ensure_dir(args.output_dir)
    prefix = args.prefix
    csv_path = os.path.join(out, f"{prefix}morphometry.csv")
    morpho.write_morphometry_csv(csv_path, records)
    print(f"wrote {csv_path}")

    params = {"labeled": args.labels is not None}
    extra = {}
    if unknown is not None:
        extra["unmapped_vertices"] = int(unknown)
    prov = _provenance("morph", params, **extra)
    _write_json(os.path.join(out, f"{prefix}provenance.json"), prov)
    return 0


# ---------------------------------------------------------------------------
# eval


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def _read_series(path):
    """Two-column numeric CSV (x,y), optional header row, -> two arrays."""
    try:
        with open(str(path), "rt", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputFormatError(f"{path}: {exc.strerror or exc}") from exc
    xs, ys = [], []
    for lineno, row in enumerate(rows, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if lineno == 1 and not _is_number(row[0]):
            continue  # header row
        if len(row) < 2:
            raise InputFormatError(
                f"{path}, line {lineno}: expected two comma-separated values"
            )
        if not (_is_number(row[0]) and _is_number(row[1])):
            raise InputFormatError(f"{path}, line {lineno}: non-numeric value")
        xs.append(float(row[0]))
        ys.append(float(row[1]))
    if not xs:
        raise InputFormatError(f"{path}: no data rows")
    return np.asarray(xs), np.asarray(ys)


def cmd_eval(args) -> int:
    report = {}
    if args.white:
        report.setdefault("surfaces", {})["white"] = metrics.surface_distance_report(
            read_mesh(args.white[0]), read_mesh(args.white[1]), mode=args.mode
        )
    if args.pial:
        report.setdefault("surfaces", {})["pial"] = metrics.surface_distance_report(
            read_mesh(args.pial[0]), read_mesh(args.pial[1]), mode=args.mode
        )
    if args.labels:
        a = parcel.read_labels(args.labels[0])
        b = parcel.read_labels(args.labels[1])
        if a.shape != b.shape:
            raise UsageError(
                f"label files disagree on vertex count ({len(a)} vs {len(b)})"
            )
        report["dice"] = {str(k): float(v) for k, v in metrics.dice(a, b).items()}
        report["dice_macro"] = float(metrics.dice_macro(a, b))
    if args.series:
        x, y = _read_series(args.series)
        result = metrics.pearson(metrics.MeasurementSeries(x, y))
        report["pearson"] = {
            "r": float(result.r),
            "ci_lo": float(result.ci_lo),
            "ci_hi": float(result.ci_hi),
            "n": int(result.n),
            "significant": bool(result.significant),
        }
    if not report:
        raise UsageError(
            "nothing to compare; pass --white, --pial, --labels, or --series"
        )

    out = _ensure_dir(args.output_dir)
    _write_json(os.path.join(out, "metrics.json"), report)
    prov = _provenance("eval", {"mode": args.mode}, metrics=report)
    _write_json(os.path.join(out, "provenance.json"), prov)
    return 0


# ---------------------------------------------------------------------------
# pipeline


_SIDE_PREFIXES = {"left": ("lh",), "right": ("rh",), "both": ("lh", "rh")}


def _find_input(directory, stem):
    """Resolve <dir>/<stem> with an optional .gz, erroring when absent."""
    path = _find_optional(directory, stem)
    if path is None:
        raise UsageError(f"missing input {os.path.join(directory, stem)}[.gz]")
    return path


def _find_optional(directory, stem):
    for name in (stem, stem + ".gz"):
        path = os.path.join(directory, name)
        if os.path.exists(path):
            return path
    return None


def _pipeline_labels(input_dir, hemi, white):
    """Vertex labels for a reconstructed white surface, when provided.

    ``<hemi>.labels.csv`` alone must already align with the reconstruction.
    Paired with ``<hemi>.template.off`` it is read against the template and
    carried over by nearest-vertex transfer, which is the usual route since
    the reconstructed vertex set is not known ahead of time.
    """
    labels_path = _find_optional(input_dir, f"{hemi}.labels.csv")
    if labels_path is None:
        return None
    template_path = _find_optional(input_dir, f"{hemi}.template.off")
    if template_path is None:
        return parcel.read_labels(labels_path, n_vertices=white.n_vertices)
    template = read_mesh(template_path)
    raw = parcel.read_labels(labels_path, n_vertices=template.n_vertices)
    labels, _ = parcel.transfer_labels(template, raw, white)
    return labels


def cmd_pipeline(args) -> int:
    refine = _refine_params(args.config)
    subj = os.path.join(args.sd, args.subjid)
    surf_dir = _ensure_dir(os.path.join(subj, "surf"))
    stats_dir = _ensure_dir(os.path.join(subj, "stats"))

    sides = {}
    for hemi in _SIDE_PREFIXES[args.side]:
        white_sdf = _load_sdf(
            _find_input(args.i, f"{hemi}.white.sdf.nii"), refine["clip_mm"]
        )
        pial_sdf = _load_sdf(
            _find_input(args.i, f"{hemi}.pial.sdf.nii"), refine["clip_mm"]
        )
        white, pial, topo = _reconstruct(white_sdf, pial_sdf, refine)
        _write_surface(white, os.path.join(surf_dir, f"{hemi}.white.off"))
        _write_surface(pial, os.path.join(surf_dir, f"{hemi}.pial.off"))
        _write_json(os.path.join(surf_dir, f"{hemi}.topology.json"), topo)

        region_labels = _pipeline_labels(args.i, hemi, white)
        if region_labels is not None:
            parcel.write_labels(
                os.path.join(surf_dir, f"{hemi}.labels.csv"), region_labels
            )
            print(f"wrote {os.path.join(surf_dir, f'{hemi}.labels.csv')}")
        records, unknown = _morph_records(white, pial, region_labels, None)
        morpho.write_morphometry_csv(
            os.path.join(stats_dir, f"{hemi}.morphometry.csv"), records
        )
        print(f"wrote {os.path.join(stats_dir, f'{hemi}.morphometry.csv')}")

        sides[hemi] = {"topology": topo, "labeled": region_labels is not None}
        if unknown is not None:
            sides[hemi]["unmapped_vertices"] = int(unknown)

    params = {"side": args.side, "refine": refine}
    prov = _provenance("pipeline", params, subject=args.subjid, sides=sides)
    _write_json(os.path.join(subj, "provenance.json"), prov)
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not (0 <= value < 2**64):
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit int")
    return value


def _add_threads(sub) -> None:
    sub.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker threads (default: CORTEXFORGE_THREADS or 1)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cortexforge",
        description="SDF-based cortical surface synthesis and reconstruction",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate one synthetic training sample")
    p.add_argument("--labels", required=True, help="label volume (NIfTI)")
    p.add_argument("--schema", required=True, help="label schema (JSON)")
    p.add_argument("--white", required=True, help="white surface mesh (OFF)")
    p.add_argument("--pial", required=True, help="pial surface mesh (OFF)")
    p.add_argument("--seed", type=_u64, default=0, help="sample seed (u64)")
    p.add_argument("--config", default=None, help="generator config (JSON)")
    p.add_argument(
        "--preset",
        choices=sorted(synth.ACQUISITION_PRESETS),
        default=None,
        help="pin the acquisition instead of sampling it",
    )
    p.add_argument("--clip-mm", type=float, default=5.0, help="SDF clip (mm)")
    p.add_argument("--stem", default="sample", help="output file stem")
    p.add_argument("--output-dir", required=True)
    _add_threads(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("recon", help="reconstruct white/pial surfaces from SDFs")
    p.add_argument("--white-sdf", default=None, help="white SDF volume (NIfTI)")
    p.add_argument("--pial-sdf", default=None, help="pial SDF volume (NIfTI)")
    p.add_argument("--white", default=None, help="oracle white mesh (OFF)")
    p.add_argument("--pial", default=None, help="oracle pial mesh (OFF)")
    p.add_argument(
        "--dims", type=int, nargs=3, default=None, metavar=("NX", "NY", "NZ"),
        help="oracle-mode lattice dims",
    )
    p.add_argument(
        "--spacing", type=float, nargs=3, default=(1.0, 1.0, 1.0),
        metavar=("SX", "SY", "SZ"), help="oracle-mode voxel spacing (mm)",
    )
    p.add_argument(
        "--origin", type=float, nargs=3, default=(0.0, 0.0, 0.0),
        metavar=("OX", "OY", "OZ"), help="oracle-mode lattice origin (mm)",
    )
    p.add_argument("--config", default=None, help="refinement config (JSON)")
    p.add_argument("--prefix", default="", help="output filename prefix")
    p.add_argument("--output-dir", required=True)
    _add_threads(p)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("morph", help="morphometry table from a surface pair")
    p.add_argument("--white", required=True, help="white surface mesh (OFF)")
    p.add_argument("--pial", required=True, help="pial surface mesh (OFF)")
    p.add_argument("--labels", default=None, help="vertex labels (CSV)")
    p.add_argument("--table", default=None, help="label table (JSON)")
    p.add_argument("--prefix", default="", help="output filename prefix")
    p.add_argument("--output-dir", required=True)
    _add_threads(p)
    p.set_defaults(func=cmd_morph)

    p = sub.add_parser("eval", help="compare surfaces, labels, or series")
    p.add_argument("--white", nargs=2, metavar=("A", "B"), default=None)
    p.add_argument("--pial", nargs=2, metavar=("A", "B"), default=None)
    p.add_argument("--labels", nargs=2, metavar=("A", "B"), default=None)
    p.add_argument("--series", default=None, help="paired series CSV (x,y)")
    p.add_argument(
        "--mode", choices=("surface", "vertex"), default="surface",
        help="distance semantics for surface comparisons",
    )
    p.add_argument("--output-dir", required=True)
    _add_threads(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "pipeline",
        help="per-subject recon + morph into a study directory",
        prefix_chars="-",
    )
    p.add_argument("-i", required=True, help="input dir with <hemi>.*.sdf.nii[.gz]")
    p.add_argument("-subjid", required=True, help="subject identifier")
    p.add_argument("-side", choices=sorted(_SIDE_PREFIXES), default="both")
    p.add_argument("-sd", required=True, help="study (output) directory")
    p.add_argument("-threads", type=int, default=None, dest="threads")
    p.add_argument("-config", default=None, help="refinement config (JSON)")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        _configure_threads(getattr(args, "threads", None))
        return int(args.func(args) or 0)
    except CortexForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception:  # pragma: no cover - defensive catch-all
        traceback.print_exc()
        return 5


if __name__ == "__main__":
    sys.exit(main())
