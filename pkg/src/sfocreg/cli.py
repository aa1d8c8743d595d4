"""Batch command-line front end.

Subcommands: describe, match, register, synth, bench, rpc-project. All
behavior is driven by a flat ``key = value`` config file plus flag
overrides (flags win); unknown keys are rejected. Exit codes: 0 success,
2 configuration error, 3 matching failure (no control points / no
consensus), 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .descriptor import SfocParams, build_sfoc, load_volume, save_volume
from .detect import block_fast
from .geometry import (AffineTransform, EstimationError, Poly2Transform,
                       ProjectiveTransform, RansacConfig, RfmRectifier, load_rpc,
                       rfm_forward, rfm_inverse)
from .harness import SynthSpec, bench_ncc, make_texture, synth_pair
from .pipeline import (MatchConfig, MatchFailure, detect_cps, checkerboard_overlay,
                       load_manual_cps, predict_search_window, register_images,
                       save_cps)
from .raster import (GeoRef, Raster, RasterError, extract_window, load_raster,
                     load_world_file, save_raster, save_world_file)
from .similarity import fast_ncc, surface_to_unit_range


class ConfigError(Exception):
    pass


# name -> (parser, default) for the flat configuration surface
def _floats(text):
    return tuple(float(v) for v in str(text).split(","))


def _ints(text):
    return tuple(int(v) for v in str(text).split(","))


def _bool(text):
    t = str(text).strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


CONFIG_SCHEMA = {
    "template_size": int, "search_size": int, "ip_count": int,
    "min_score": float, "correct_threshold": float, "model": str, "h0": float,
    "descriptor": str, "fast_threshold": float, "fast_arc_len": int, "workers": int,
    "orientations": int, "sigmas_first": _floats, "sigma_second": _floats,
    "dilation_rates": _ints, "smooth_sigma_first": float,
    "smooth_sigma_second": float, "epsilon": float, "second_order": _bool,
    "inlier_threshold": float, "max_iterations": int, "confidence": float,
    "ransac_seed": int,
}
SFOC_KEYS = ("orientations", "sigmas_first", "sigma_second", "dilation_rates",
             "smooth_sigma_first", "smooth_sigma_second", "epsilon", "second_order")
RANSAC_KEYS = {"inlier_threshold": "inlier_threshold",
               "max_iterations": "max_iterations",
               "confidence": "confidence", "ransac_seed": "seed"}


def parse_config_file(path) -> dict:
    """Read 'key = value' lines; '#' starts a comment; unknown keys reject."""
    flat = {}
    try:
        text = Path(path).read_text(encoding="ascii")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            flat[key] = CONFIG_SCHEMA[key](value.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return flat


def build_match_config(flat: dict) -> MatchConfig:
    unknown = set(flat) - set(CONFIG_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        sfoc = SfocParams(**{k: flat[k] for k in SFOC_KEYS if k in flat})
        ransac = RansacConfig(**{RANSAC_KEYS[k]: flat[k] for k in RANSAC_KEYS if k in flat})
        main = {k: v for k, v in flat.items()
                if k not in SFOC_KEYS and k not in RANSAC_KEYS}
        return MatchConfig(sfoc=sfoc, ransac=ransac, **main)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def _gather_config(args) -> MatchConfig:
    flat = parse_config_file(args.config) if args.config else {}
    for key in CONFIG_SCHEMA:
        flag = getattr(args, f"cfg_{key}", None)
        if flag is not None:
            flat[key] = flag
    return build_match_config(flat)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value configuration file")
    for key, conv in CONFIG_SCHEMA.items():
        parser.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}",
                            type=conv, default=None, help=argparse.SUPPRESS)


def _load_geo(image_path, explicit) -> GeoRef | None:
    if explicit:
        return load_world_file(explicit)
    sidecar = Path(str(image_path) + ".wld")
    if sidecar.exists():
        return load_world_file(sidecar)
    return None


def _identity_geo() -> GeoRef:
    return GeoRef(a=1.0, d=0.0, b=0.0, e=1.0, c=0.0, f=0.0)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_describe(args) -> int:
    config = _gather_config(args)
    params = config.sfoc
    if args.fsfoc:
        params = replace(params, second_order=False)
    image = load_raster(args.image)
    volume = build_sfoc(image, params)
    save_volume(volume, args.out)
    if args.montage_dir:
        outdir = Path(args.montage_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        for k in range(volume.z):
            plane = np.clip(volume.data[:, :, k].astype(np.float64), 0.0, 1.0)
            save_raster(Raster(plane), outdir / f"channel_{k:02d}.pgm", "pgm8")
    print(f"wrote {args.out}: {volume.width}x{volume.height} z={volume.z}")
    return 0


def cmd_match(args) -> int:
    config = _gather_config(args)
    sensed = load_raster(args.sensed)
    reference = load_raster(args.reference)
    sensed_geo = _load_geo(args.sensed, args.sensed_world) or _identity_geo()
    ref_geo = _load_geo(args.reference, args.reference_world) or _identity_geo()
    cps = detect_cps(sensed, reference, config, sensed_geo, ref_geo)
    save_cps(cps, args.out)
    print(f"matched {len(cps)} control points -> {args.out}")
    if args.heatmap_dir:
        _dump_heatmaps(sensed, reference, config, sensed_geo, ref_geo,
                       Path(args.heatmap_dir), args.heatmap_count)
    return 0


def _dump_heatmaps(sensed, reference, config, sensed_geo, ref_geo,
                   outdir: Path, count: int) -> None:
    """Correlation surfaces for the first few interest points (Fig-style aid)."""
    outdir.mkdir(parents=True, exist_ok=True)
    from .pipeline import _features  # local: reuses the configured descriptor
    ips = block_fast(sensed, config.ip_count, config.fast_threshold, config.fast_arc_len)
    half = config.template_size // 2
    written = 0
    for ip in ips:
        if written >= count:
            break
        rect = predict_search_window(ip.x, ip.y, sensed_geo, ref_geo,
                                     reference.width, reference.height,
                                     config.search_size, config.template_size)
        if rect is None:
            continue
        try:
            template = extract_window(sensed, ip.x - half, ip.y - half,
                                      config.template_size, config.template_size)
            window = extract_window(reference, *rect)
            surface = fast_ncc(_features(template.raster, config),
                               _features(window.raster, config))
        except (RasterError, ValueError):
            continue
        heat = surface_to_unit_range(surface)
        save_raster(Raster(heat), outdir / f"heatmap_{ip.x}_{ip.y}.fras", "float")
        written += 1


def _model_json(model):
    if isinstance(model, AffineTransform):
        return {"kind": "affine", "coefficients": [model.a0, model.a1, model.a2,
                                                   model.b0, model.b1, model.b2]}
    if isinstance(model, ProjectiveTransform):
        return {"kind": "projective", "matrix": model.matrix.tolist()}
    if isinstance(model, Poly2Transform):
        return {"kind": "poly2", "coeffs_x": model.coeffs_x.tolist(),
                "coeffs_y": model.coeffs_y.tolist()}
    if isinstance(model, RfmRectifier):
        b = model.bias
        return {"kind": "rfm_affine", "bias": [b.a0, b.a1, b.a2, b.b0, b.b1, b.b2],
                "bias_residual_rms": b.residual_rms, "h0": model.h0}
    return {"kind": type(model).__name__}


def cmd_register(args) -> int:
    config = _gather_config(args)
    if config.model == "rfm_affine" and not args.rpc:
        raise ConfigError("model rfm_affine requires --rpc")
    rpc = load_rpc(args.rpc) if args.rpc else None
    sensed = load_raster(args.sensed)
    reference = load_raster(args.reference)
    sensed_geo = _load_geo(args.sensed, args.sensed_world) or _identity_geo()
    ref_geo = _load_geo(args.reference, args.reference_world) or _identity_geo()
    truth = load_manual_cps(args.truth_cps) if args.truth_cps else None

    result = register_images(sensed, reference, config,
                             sensed_geo=sensed_geo, ref_geo=ref_geo,
                             rpc=rpc, truth=truth)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_raster(result.rectified, outdir / "rectified.fras", "float")
    save_cps(result.cps, outdir / "control_points.csv")
    overlay = checkerboard_overlay(result.rectified, reference)
    save_raster(overlay, outdir / "checkerboard.pgm", "pgm8")

    metrics = {"ncm": None, "cmr": None, "rmse_px": None,
               "mt_seconds": result.elapsed, "model": _model_json(result.model),
               "control_points": len(result.cps),
               "inliers": sum(cp.valid for cp in result.cps)}
    if result.metrics is not None:
        metrics.update(ncm=result.metrics.ncm, cmr=result.metrics.cmr,
                       rmse_px=None if math.isnan(result.metrics.rmse)
                       else result.metrics.rmse,
                       mt_seconds=result.metrics.mt)
    (outdir / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n",
                                         encoding="ascii")
    print(f"registered: {len(result.cps)} control points, "
          f"{metrics['inliers']} inliers -> {outdir}")
    return 0


def cmd_synth(args) -> int:
    if args.base:
        base = load_raster(args.base)
    else:
        base = make_texture(args.texture_size, args.texture_size, seed=args.seed)
    transform = AffineTransform.translation(*args.translate) if args.translate \
        else AffineTransform.identity()
    spec = SynthSpec(base=base, transform=transform, tone=args.tone,
                     gamma=args.gamma, gaussian_var=args.gaussian_var,
                     speckle_var=args.speckle_var, seed=args.seed,
                     geo_bias=tuple(args.geo_bias))
    pair = synth_pair(spec)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_raster(pair.sensed, outdir / "sensed.fras", "float")
    save_raster(pair.reference, outdir / "reference.fras", "float")
    save_world_file(pair.sensed_geo, outdir / "sensed.fras.wld")
    save_world_file(pair.ref_geo, outdir / "reference.fras.wld")
    t = pair.truth_ref_to_sensed
    (outdir / "truth.json").write_text(json.dumps({
        "kind": "affine_ref_to_sensed",
        "coefficients": [t.a0, t.a1, t.a2, t.b0, t.b1, t.b2]}, indent=2) + "\n",
        encoding="ascii")
    print(f"synthetic pair -> {outdir}")
    return 0


def cmd_bench(args) -> int:
    report = bench_ncc(m=args.m, n=args.n, M=args.M, N=args.N, z=args.z,
                       repeats=args.repeats, seed=args.seed)
    print(f"template {report.m}x{report.n}x{report.z}, "
          f"search {report.M}x{report.N}x{report.z}, {args.repeats} repeats")
    print(f"fast   median: {report.fast_seconds:.4f} s")
    print(f"naive  median: {report.naive_seconds:.4f} s")
    print(f"measured ratio (fast/naive): {report.measured_ratio:.5f}")
    print(f"predicted ratio (op model) : {report.predicted_ratio:.5f}")
    return 0


def cmd_rpc_project(args) -> int:
    rpc = load_rpc(args.rpc)
    if args.inverse:
        if args.line is None or args.sample is None:
            raise ConfigError("--inverse needs --line and --sample")
        lat, lon = rfm_inverse(rpc, args.line, args.sample, args.height)
        print(f"lat: {lat!r}\nlon: {lon!r}")
    else:
        if args.lat is None or args.lon is None:
            raise ConfigError("forward projection needs --lat and --lon")
        line, sample = rfm_forward(rpc, args.lat, args.lon, args.height)
        print(f"line: {float(line)!r}\nsample: {float(sample)!r}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfocreg",
        description="Multimodal image registration by structural feature correlation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", help="compute and dump a feature volume")
    p.add_argument("image")
    p.add_argument("--out", required=True)
    p.add_argument("--fsfoc", action="store_true",
                   help="first-order channels only (z = orientations)")
    p.add_argument("--montage-dir", help="also write one PGM per channel")
    _add_config_flags(p)
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("match", help="detect control points between two images")
    p.add_argument("sensed")
    p.add_argument("reference")
    p.add_argument("--out", required=True, help="control point CSV path")
    p.add_argument("--sensed-world")
    p.add_argument("--reference-world")
    p.add_argument("--heatmap-dir", help="dump correlation heatmaps here")
    p.add_argument("--heatmap-count", type=int, default=4)
    _add_config_flags(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("register", help="full registration incl. rectification")
    p.add_argument("sensed")
    p.add_argument("reference")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--rpc", help="camera model file (required for model rfm_affine)")
    p.add_argument("--sensed-world")
    p.add_argument("--reference-world")
    p.add_argument("--truth-cps", help="manual sensed/reference pairs CSV for metrics")
    _add_config_flags(p)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("synth", help="generate a synthetic multimodal pair")
    p.add_argument("--base", help="base raster; omit to use a procedural texture")
    p.add_argument("--texture-size", type=int, default=384)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--translate", nargs=2, type=float, metavar=("DX", "DY"))
    p.add_argument("--tone", default="none",
                   choices=["none", "gamma", "inversion", "piecewise"])
    p.add_argument("--gamma", type=float, default=2.2)
    p.add_argument("--gaussian-var", type=float, default=0.0)
    p.add_argument("--speckle-var", type=float, default=0.0)
    p.add_argument("--geo-bias", nargs=2, type=float, default=(0.0, 0.0),
                   metavar=("BX", "BY"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="time fast vs naive correlation")
    p.add_argument("--m", type=int, default=100)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--M", type=int, default=200)
    p.add_argument("--N", type=int, default=200)
    p.add_argument("--z", type=int, default=12)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("rpc-project", help="project through a camera model file")
    p.add_argument("--rpc", required=True)
    p.add_argument("--lat", type=float)
    p.add_argument("--lon", type=float)
    p.add_argument("--height", type=float, default=0.0)
    p.add_argument("--inverse", action="store_true")
    p.add_argument("--line", type=float)
    p.add_argument("--sample", type=float)
    p.set_defaults(func=cmd_rpc_project)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (MatchFailure, EstimationError) as exc:
        print(f"matching failed: {exc}", file=sys.stderr)
        return 3
    except (RasterError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
