"""Command-line pipeline: phantom generation, plane estimation, mirroring,
DRR rendering, 2D/3D registration, overlay augmentation and batch sweeps.

Each subcommand is one stage; stages communicate through files (MHD volumes,
JSON planes/poses/cameras, PGM images, PNG overlays, CSV tables), so any
stage can be rerun or inspected in isolation and chaining all of them
reproduces the complete augmentation pipeline.  Every command writes an
``effective_config.json`` into its output directory: the merge of config
file, defaults and flags that actually governed the run, sufficient to
reproduce it exactly.

Exit codes: 0 on success, 1 on runtime failures (missing files, pipeline
errors), 2 on usage or validation failures (bad flags, malformed JSON).
Diagnostics go to stderr; files and machine-readable text go to stdout or
the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from .geometry import CameraPose, SymPlane
from .metrics import TukeyParams, TukeyVariant, HistogramConfig
from .phantom import (
    PhantomSpec,
    apply_fracture,
    corrupt,
    default_pelvis,
    fracture_preset,
    generate_phantom,
    landmark_pairs,
)
from .projector import (
    OverlaySpec,
    compose_overlay,
    extract_edges,
    make_camera,
    read_pgm,
    render_drr,
    write_pgm,
    write_png,
)
from .registration import RegistrationConfig, register_2d3d
from .symmetry import (
    OBJECTIVES,
    SymmetryConfig,
    estimate_plane,
    initialize_plane,
    mirror_volume,
)
from .evalsweep import SweepGrid, landmark_table, run_sweep
from .volume import load_mhd, save_mhd

log = logging.getLogger("symplane")

# Keys a config file may set; flags with the same name override them.
_CONFIG_KEYS = {
    "objective": str,
    "lambda": float,
    "variant": str,
    "c": float,
    "bins": int,
    "bone_threshold": float,
    "pyramid_levels": int,
    "max_iterations": int,
    "seed": int,
    "threads": int,
    "step_mm": float,
    "min_intensity": float,
    "edge_threshold": float,
    "edge_color": list,
}

_DEFAULTS = {
    "objective": "regularized-tukey",
    "lambda": 0.5,
    "variant": "as-written",
    "c": 4.685,
    "bins": 64,
    "bone_threshold": 150.0,
    "pyramid_levels": 3,
    "max_iterations": 100,
    "seed": 0,
    "threads": 0,  # 0: leave the BLAS/OpenMP defaults alone
    "edge_threshold": 0.2,
    "edge_color": [0, 255, 0],
}


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _effective_config(args) -> dict:
    """Defaults, overlaid by the config file, overlaid by explicit flags."""
    eff = dict(_DEFAULTS)
    if getattr(args, "config", None):
        raw = _load_json(args.config)
        if not isinstance(raw, dict):
            raise ValueError("config file must hold a JSON object")
        for key, value in raw.items():
            if key not in _CONFIG_KEYS:
                raise ValueError(f"unknown config key {key!r}")
            eff[key] = _CONFIG_KEYS[key](value)
    for key in _CONFIG_KEYS:
        flag = key.replace("-", "_") if key != "lambda" else "lam"
        value = getattr(args, flag, None)
        if value is not None:
            eff[key] = value
    if eff["objective"] not in OBJECTIVES:
        raise ValueError(f"unknown objective {eff['objective']!r}")
    return eff


def _symmetry_config(eff: dict) -> SymmetryConfig:
    return SymmetryConfig(
        objective=eff["objective"],
        tukey=TukeyParams(c=eff["c"], variant=TukeyVariant(eff["variant"])),
        lam=eff["lambda"],
        hist=HistogramConfig(bins=eff["bins"], bone_threshold=eff["bone_threshold"]),
        pyramid_levels=eff["pyramid_levels"],
        max_iterations=eff["max_iterations"],
        seed=eff["seed"],
    )


def _prepare_out(args, eff: dict) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    _write_json(eff, os.path.join(out, "effective_config.json"))
    return out


def _apply_threads(n: int) -> None:
    if n and n > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def _camera_for(args, vol) -> CameraPose:
    if getattr(args, "camera", None):
        return CameraPose.from_json(_load_json(args.camera))
    return make_camera(vol, view=getattr(args, "view", None) or "ap")


# ---------------------------------------------------------------------------
# Subcommands.  Each takes parsed args plus the merged config and returns 0.
# ---------------------------------------------------------------------------


def _cmd_gen_phantom(args, eff) -> int:
    if args.spec:
        raw = _load_json(args.spec)
        extras = raw.get("phantom") is not None
        spec = PhantomSpec.from_json(raw["phantom"] if extras else raw)
        fractures = raw.get("fractures", []) if extras else []
        corruption = raw.get("corrupt") if extras else None
    else:
        spec, fractures, corruption = default_pelvis(args.variant_index), [], None
    if args.fracture:
        fractures = list(fractures) + list(args.fracture)

    out = _prepare_out(args, eff)
    vol, truth = generate_phantom(spec)
    save_mhd(vol, os.path.join(out, "volume.mhd"))
    _write_json(truth.to_json(), os.path.join(out, "truth_plane.json"))
    _write_json(spec.to_json(), os.path.join(out, "phantom_spec.json"))
    marks = [
        {"name": n, "left": list(l), "right": list(r)}
        for n, l, r in landmark_pairs(spec)
    ]
    _write_json(marks, os.path.join(out, "landmarks.json"))

    for kind in fractures:
        frac = fracture_preset(kind, spec)
        broken = apply_fracture(vol, frac, spec.background, truth)
        save_mhd(broken, os.path.join(out, f"volume_{kind}.mhd"))
    if corruption is not None:
        noisy = corrupt(
            vol,
            float(corruption.get("noise_pct", 0.0)),
            float(corruption.get("outlier_pct", 0.0)),
            int(corruption.get("seed", eff["seed"])),
            corruption.get("mode", "blobs"),
        )
        save_mhd(noisy, os.path.join(out, "volume_corrupt.mhd"))
    log.info("phantom written to %s (%d fracture variants)", out, len(fractures))
    return 0


def _cmd_estimate(args, eff) -> int:
    vol = load_mhd(args.volume)
    cfg = _symmetry_config(eff)
    init = (
        SymPlane.from_json(_load_json(args.init))
        if args.init
        else initialize_plane(vol, eff["bone_threshold"])
    )
    out = _prepare_out(args, eff)
    result = estimate_plane(vol, init, cfg)

    _write_json(result.plane.to_json(), os.path.join(out, "plane.json"))
    _write_json(result.to_json(), os.path.join(out, "report.json"))
    save_mhd(result.outlier_mask, os.path.join(out, "outlier_mask.mhd"))
    with open(os.path.join(out, "trace.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "k", "theta", "phi", "offset", "f"])
        for level, tr in enumerate(result.traces):
            for k, x, f in tr.rows:
                w.writerow([level, k, repr(x[0]), repr(x[1]), repr(x[2]), repr(f)])
    log.info(
        "plane: theta=%.4f phi=%.4f offset=%.3f (objective %.6f -> %.6f)",
        result.plane.theta, result.plane.phi, result.plane.offset,
        result.initial_objective, result.final_objective,
    )
    return 0


def _cmd_mirror(args, eff) -> int:
    vol = load_mhd(args.volume)
    plane = SymPlane.from_json(_load_json(args.plane))
    out = _prepare_out(args, eff)
    mirrored = mirror_volume(vol, plane, fill=args.fill)
    save_mhd(mirrored, os.path.join(out, "mirrored.mhd"))
    log.info("mirrored volume written to %s", out)
    return 0


def _cmd_drr(args, eff) -> int:
    vol = load_mhd(args.volume)
    cam = _camera_for(args, vol)
    out = _prepare_out(args, eff)
    img = render_drr(vol, cam, eff.get("step_mm"), eff.get("min_intensity", 0.0))
    write_pgm(img, os.path.join(out, "drr.pgm"))
    _write_json(cam.to_json(), os.path.join(out, "camera.json"))
    log.info("DRR written to %s", out)
    return 0


def _cmd_register(args, eff) -> int:
    vol = load_mhd(args.volume)
    target = read_pgm(args.target)
    cam = _camera_for(args, vol)
    cfg = RegistrationConfig(
        pyramid_levels=eff["pyramid_levels"],
        max_iterations=eff["max_iterations"],
        min_intensity=eff.get("min_intensity", 0.0),
        step_mm=eff.get("step_mm"),
        seed=eff["seed"],
    )
    out = _prepare_out(args, eff)
    pose = register_2d3d(vol, target, cam, cfg)
    _write_json(pose.to_json(), os.path.join(out, "pose.json"))
    refined = CameraPose(
        cam.sdd, cam.sid, cam.det_dims, cam.pixel_spacing, pose.extrinsic
    )
    _write_json(refined.to_json(), os.path.join(out, "camera_refined.json"))
    if pose.low_confidence:
        log.warning("registration NCC %.4f is low; pose may be unreliable", pose.ncc_value)
    else:
        log.info("registration NCC %.6f", pose.ncc_value)
    return 0


def _cmd_augment(args, eff) -> int:
    vol = load_mhd(args.volume)
    xray = read_pgm(args.xray)
    if args.camera:
        cam = CameraPose.from_json(_load_json(args.camera))
    else:
        cam = make_camera(vol, view=args.view or "ap")
    if args.pose:
        pose = _load_json(args.pose)
        from .geometry import RigidTransform

        cam = CameraPose(
            cam.sdd, cam.sid, cam.det_dims, cam.pixel_spacing,
            RigidTransform.from_json(pose["extrinsic"] if "extrinsic" in pose else pose),
        )
    if cam.det_dims != xray.dims:
        raise ValueError(
            f"camera detector {cam.det_dims} does not match X-ray {xray.dims}"
        )
    spec = OverlaySpec(
        edge_threshold=eff["edge_threshold"],
        edge_color=tuple(eff["edge_color"]),
    )
    out = _prepare_out(args, eff)
    # Bone silhouettes come from a bone-only DRR of the (mirrored) volume.
    drr = render_drr(vol, cam, eff.get("step_mm"), eff.get("min_intensity") or
                     eff["bone_threshold"])
    edges = extract_edges(drr, spec)
    overlay = compose_overlay(xray, edges, spec)
    write_png(overlay, os.path.join(out, "overlay.png"))
    write_pgm(edges, os.path.join(out, "edges.pgm"))
    log.info("overlay written to %s", out)
    return 0


def _parse_pairs(text: str):
    """'0,2,4' -> [(0,0.0),(2,2.0),(4,4.0)]; '4:2,8:6' -> [(4,2.0),(8,6.0)]."""
    pairs = []
    for item in text.split(","):
        if ":" in item:
            t, r = item.split(":", 1)
            pairs.append((int(t), float(r)))
        else:
            pairs.append((int(item), float(item)))
    return tuple(pairs)


def _cmd_sweep(args, eff) -> int:
    spec = (
        PhantomSpec.from_json(_load_json(args.spec)) if args.spec else default_pelvis()
    )
    grid = SweepGrid(
        init_offsets=_parse_pairs(args.offsets) if args.offsets else SweepGrid().init_offsets,
        noise_levels=tuple(int(v) for v in args.noise.split(",")) if args.noise else (0,),
        outlier_levels=tuple(int(v) for v in args.outliers.split(",")) if args.outliers else (0,),
        objectives=tuple(args.objectives.split(",")) if args.objectives else OBJECTIVES,
        seeds=args.seeds,
    )
    out = _prepare_out(args, eff)
    result = run_sweep(spec, grid, _symmetry_config(eff))
    result.write_csv(os.path.join(out, "sweep.csv"))
    result.write_timings(os.path.join(out, "timings.csv"))
    result.write_heatmaps(out)
    n_ok = sum(1 for r in result.records if r.status == "ok")
    log.info("sweep: %d/%d runs ok", n_ok, len(result.records))
    return 0


def _cmd_eval(args, eff) -> int:
    marks = _load_json(args.landmarks)
    left = np.array([m["left"] for m in marks], dtype=np.float64)
    right = np.array([m["right"] for m in marks], dtype=np.float64)
    names = tuple(m["name"] for m in marks)
    init = SymPlane.from_json(_load_json(args.init)) if args.init else None
    cases = [(load_mhd(path), left, right, init) for path in args.volumes]
    objectives = tuple(args.objectives.split(",")) if args.objectives else OBJECTIVES
    out = _prepare_out(args, eff)
    table = landmark_table(
        cases, _symmetry_config(eff), objectives, landmark_names=names
    )
    table.write_csv(os.path.join(out, "landmarks.csv"))
    sys.stdout.write(table.to_text() + "\n")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and dispatch.
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--out", help="output directory (default: current)")
    p.add_argument("--seed", type=int, help="base random seed")
    p.add_argument("--threads", type=int, help="cap worker threads (0 = library default)")
    p.add_argument("--quiet", action="store_true", help="suppress progress logging")
    p.add_argument("--objective", choices=OBJECTIVES, help="similarity objective")
    p.add_argument("--lambda", dest="lam", type=float,
                   help="weight of the density regularizer")
    p.add_argument("--variant", choices=[v.value for v in TukeyVariant],
                   help="Tukey loss form")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symplane",
        description="Symmetry-plane estimation and image augmentation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-phantom", help="generate a synthetic symmetric volume")
    p.add_argument("--spec", help="phantom spec JSON (default: built-in pelvis)")
    p.add_argument("--variant-index", type=int, default=0,
                   help="built-in phantom variant (ignored with --spec)")
    p.add_argument("--fracture", action="append",
                   choices=["iliac-wing", "pelvic-ring", "vertical-shear"],
                   help="also write this fracture variant (repeatable)")
    _add_common(p)
    p.set_defaults(func=_cmd_gen_phantom)

    p = sub.add_parser("estimate", help="estimate the symmetry plane of a volume")
    p.add_argument("volume", help="input MHD volume")
    p.add_argument("--init", help="initial plane JSON (default: bone centroid)")
    _add_common(p)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("mirror", help="mirror a volume across a plane")
    p.add_argument("volume", help="input MHD volume")
    p.add_argument("--plane", required=True, help="plane JSON")
    p.add_argument("--fill", type=float, help="fill value outside the volume")
    _add_common(p)
    p.set_defaults(func=_cmd_mirror)

    p = sub.add_parser("drr", help="render a DRR of a volume")
    p.add_argument("volume", help="input MHD volume")
    p.add_argument("--camera", help="camera JSON (default: synthetic AP view)")
    p.add_argument("--view", choices=["ap", "lateral"], help="synthetic view")
    p.add_argument("--step-mm", dest="step_mm", type=float, help="ray step length")
    p.add_argument("--min-intensity", dest="min_intensity", type=float,
                   help="ignore samples below this intensity")
    _add_common(p)
    p.set_defaults(func=_cmd_drr)

    p = sub.add_parser("register", help="register a volume to a 2D image")
    p.add_argument("volume", help="input MHD volume")
    p.add_argument("--target", required=True, help="target PGM image")
    p.add_argument("--camera", help="initial camera JSON (default: AP view)")
    p.add_argument("--view", choices=["ap", "lateral"], help="synthetic view")
    p.add_argument("--step-mm", dest="step_mm", type=float, help="ray step length")
    p.add_argument("--min-intensity", dest="min_intensity", type=float,
                   help="ignore samples below this intensity")
    _add_common(p)
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("augment", help="overlay DRR edges onto an X-ray image")
    p.add_argument("volume", help="volume to render (typically the mirrored one)")
    p.add_argument("--xray", required=True, help="X-ray PGM to annotate")
    p.add_argument("--camera", help="camera JSON")
    p.add_argument("--pose", help="registered pose JSON (overrides camera extrinsic)")
    p.add_argument("--view", choices=["ap", "lateral"], help="synthetic view")
    p.add_argument("--step-mm", dest="step_mm", type=float, help="ray step length")
    p.add_argument("--min-intensity", dest="min_intensity", type=float,
                   help="DRR intensity floor (default: bone threshold)")
    p.add_argument("--edge-threshold", dest="edge_threshold", type=float,
                   help="relative edge detection threshold")
    _add_common(p)
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("sweep", help="corruption/initialization recovery sweep")
    p.add_argument("--spec", help="phantom spec JSON (default: built-in pelvis)")
    p.add_argument("--offsets", help="init offsets, e.g. '0,2,4' or '4:2,8:6' (vox:deg)")
    p.add_argument("--noise", help="noise percentages, e.g. '0,10'")
    p.add_argument("--outliers", help="outlier percentages, e.g. '0,20'")
    p.add_argument("--objectives", help="comma-separated objective list")
    p.add_argument("--seeds", type=int, default=3, help="seeds per cell")
    _add_common(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("eval", help="landmark symmetry-error table")
    p.add_argument("volumes", nargs="+", help="MHD volumes to evaluate")
    p.add_argument("--landmarks", required=True, help="landmarks JSON from gen-phantom")
    p.add_argument("--init", help="initial plane JSON shared by all volumes")
    p.add_argument("--objectives", help="comma-separated objective list")
    _add_common(p)
    p.set_defaults(func=_cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0

    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        eff = _effective_config(args)
        _apply_threads(eff["threads"])
        return args.func(args, eff)
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        log.error("%s", e)
        return 2
    except Exception as e:
        log.error("%s: %s", type(e).__name__, e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
