"""Coarse-to-fine registration: detect, predict, match, reject, rectify.

Interest points come from the block-partitioned segment-test detector on the
sensed image. Per point, either the geo-referencing of both images predicts
a search window in the reference (geometrically corrected inputs), or the
rational camera model locally rectifies the template first (raw inputs with
camera files). Control points are the correlation peaks of the structural
feature volumes; outliers are removed by RANSAC (pixel-space models) or by
iterative affine bias compensation (camera-model path). Per-point matching
is pure, so a worker pool changes the wall time but not a single output bit.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .descriptor import SfocParams, build_sfoc, raw_intensity_volume
from .detect import block_fast
from .filters import smooth_dilated
from .geometry import (AffineTransform, EstimationError, RansacConfig, RfmRectifier,
                       RpcModel, affine_bias_fit, local_affine_from_rfm, min_sample_size,
                       ransac, warp_resample)
from .raster import GeoRef, Patch, Raster, RasterError, extract_window
from .similarity import DegenerateTemplateError, fast_ncc, peak_locate


class MatchFailure(RuntimeError):
    """The pipeline produced no usable control points or no consensus."""


@dataclass(frozen=True)
class MatchConfig:
    """Knobs of the full matching pipeline (defaults are the system ones)."""

    template_size: int = 100
    search_size: int = 200
    ip_count: int = 400
    min_score: float = 0.2
    correct_threshold: float = 1.5
    model: str = "projective"  # projective | poly2 | rfm_affine
    h0: float = 0.0
    descriptor: str = "sfoc"  # sfoc | raw
    fast_threshold: float = 0.08
    fast_arc_len: int = 9
    workers: int = 1
    sfoc: SfocParams = field(default_factory=SfocParams)
    ransac: RansacConfig = field(default_factory=RansacConfig)

    def __post_init__(self):
        if not (0 < self.template_size < self.search_size):
            raise ValueError("need 0 < template_size < search_size")
        if self.ip_count < 1 or self.workers < 1:
            raise ValueError("ip_count and workers must be positive")
        if self.model not in ("projective", "poly2", "rfm_affine"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.descriptor not in ("sfoc", "raw"):
            raise ValueError(f"unknown descriptor {self.descriptor!r}")


@dataclass
class ControlPoint:
    sensed_x: float
    sensed_y: float
    ref_x: float
    ref_y: float
    score: float
    valid: bool = True


@dataclass(frozen=True)
class RegistrationMetrics:
    ncm: int
    cmr: float
    rmse: float
    mt: float


def _features(image, config: MatchConfig):
    if config.descriptor == "raw":
        return raw_intensity_volume(image)
    return build_sfoc(image, config.sfoc)


def predict_search_window(ip_x: float, ip_y: float, sensed_geo: GeoRef,
                          ref_geo: GeoRef, ref_width: int, ref_height: int,
                          search_size: int, template_size: int):
    """Reference-image rectangle (x0, y0, w, h) centered on the predicted
    location, clipped to bounds; None when the point cannot be matched."""
    gx, gy = sensed_geo.pixel_to_geo(ip_x, ip_y)
    cx, cy = ref_geo.geo_to_pixel(gx, gy)
    if not (0 <= cx <= ref_width - 1 and 0 <= cy <= ref_height - 1):
        return None
    w = min(search_size, ref_width)
    h = min(search_size, ref_height)
    if w < template_size or h < template_size:
        return None
    x0 = int(round(cx)) - search_size // 2
    y0 = int(round(cy)) - search_size // 2
    x0 = max(0, min(x0, ref_width - w))
    y0 = max(0, min(y0, ref_height - h))
    return x0, y0, w, h


def match_ip(template, window, config: MatchConfig, sensed_x: float, sensed_y: float):
    """Correlate one template against one search window.

    Returns a ControlPoint at the correlation peak, or None when the
    template is degenerate, no offset is scorable, or the peak falls under
    the acceptance floor. The reference coordinates are the window origin
    plus the peak offset plus the template half extent.
    """
    tvol = _features(template.raster, config)
    svol = _features(window.raster, config)
    try:
        surface = fast_ncc(tvol, svol)
    except DegenerateTemplateError:
        return None
    if not surface.valid.any():
        return None
    px, py, score = peak_locate(surface)
    if score < config.min_score:
        return None
    half = config.template_size // 2
    return ControlPoint(sensed_x=float(sensed_x), sensed_y=float(sensed_y),
                        ref_x=float(window.origin_x + px + half),
                        ref_y=float(window.origin_y + py + half),
                        score=score)


def _match_one_l2(sensed: Raster, reference: Raster, ip, config: MatchConfig,
                  sensed_geo: GeoRef, ref_geo: GeoRef):
    size = config.template_size
    half = size // 2
    rect = predict_search_window(ip.x, ip.y, sensed_geo, ref_geo,
                                 reference.width, reference.height,
                                 config.search_size, size)
    if rect is None:
        return None
    try:
        template = extract_window(sensed, ip.x - half, ip.y - half, size, size)
        window = extract_window(reference, *rect)
    except RasterError:
        return None
    return match_ip(template, window, config, ip.x, ip.y)


def _match_one_l1(sensed: Raster, reference: Raster, ip, config: MatchConfig,
                  ref_geo: GeoRef, rpc: RpcModel):
    size = config.template_size
    half = size // 2
    try:
        affine, _ = local_affine_from_rfm(rpc, ref_geo, ip.x, ip.y, half, config.h0)
    except EstimationError:
        return None
    cx, cy = affine.apply(ip.x, ip.y)
    cx, cy = float(cx), float(cy)
    if not (0 <= cx <= reference.width - 1 and 0 <= cy <= reference.height - 1):
        return None
    ox = int(round(cx)) - half
    oy = int(round(cy)) - half
    # sensed -> template-local coordinates: the local correction, then shift
    to_local = AffineTransform(a0=affine.a0 - ox, a1=affine.a1, a2=affine.a2,
                               b0=affine.b0 - oy, b1=affine.b1, b2=affine.b2)
    try:
        corrected = warp_resample(sensed, to_local, size, size)
    except EstimationError:
        return None
    rect = _clip_window(int(round(cx)), int(round(cy)), reference.width,
                        reference.height, config.search_size, size)
    if rect is None:
        return None
    window = extract_window(reference, *rect)
    return match_ip(Patch(corrected, ox, oy), window, config, ip.x, ip.y)


def _clip_window(cx: int, cy: int, width: int, height: int,
                 search_size: int, template_size: int):
    w = min(search_size, width)
    h = min(search_size, height)
    if w < template_size or h < template_size:
        return None
    x0 = max(0, min(cx - search_size // 2, width - w))
    y0 = max(0, min(cy - search_size // 2, height - h))
    return x0, y0, w, h


def detect_cps(sensed: Raster, reference: Raster, config: MatchConfig,
               sensed_geo: GeoRef | None = None, ref_geo: GeoRef | None = None,
               rpc: RpcModel | None = None) -> list[ControlPoint]:
    """Detect control points over block-uniform interest points.

    Geometrically corrected path needs both geo-references; the camera-model
    path (model == 'rfm_affine') needs the camera file plus the reference
    geo-reference. Results keep interest-point order. Raises MatchFailure
    when nothing matches.
    """
    l1 = config.model == "rfm_affine"
    if l1:
        if rpc is None or ref_geo is None:
            raise ValueError("camera-model path needs rpc and reference geo-reference")
    else:
        if sensed_geo is None or ref_geo is None:
            raise ValueError("geo-corrected path needs both geo-references")

    ips = block_fast(sensed, config.ip_count, config.fast_threshold, config.fast_arc_len)
    if not ips:
        raise MatchFailure("no interest points detected on the sensed image")

    def job(ip):
        if l1:
            return _match_one_l1(sensed, reference, ip, config, ref_geo, rpc)
        return _match_one_l2(sensed, reference, ip, config, sensed_geo, ref_geo)

    if config.workers == 1:
        results = [job(ip) for ip in ips]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(job, ips))

    cps = [cp for cp in results if cp is not None]
    if not cps:
        raise MatchFailure("no control points matched")
    return cps


def refine_and_reject(cps: list[ControlPoint], config: MatchConfig,
                      rpc: RpcModel | None = None, ref_geo: GeoRef | None = None):
    """Reject mismatches and fit the registration model.

    Pixel-space models use RANSAC; the camera-model path fits the affine
    bias compensation with iterative rejection. The returned list keeps
    every control point, with ``valid`` flags updated in place of deletion.
    """
    if config.model == "rfm_affine":
        if rpc is None or ref_geo is None:
            raise ValueError("camera-model refinement needs rpc and reference geo")
        if len(cps) < 4:
            raise MatchFailure(f"bias compensation needs >= 4 control points, got {len(cps)}")
        lines = np.array([cp.sensed_y for cp in cps])
        samples = np.array([cp.sensed_x for cp in cps])
        lon, lat = ref_geo.pixel_to_geo(np.array([cp.ref_x for cp in cps]),
                                        np.array([cp.ref_y for cp in cps]))
        try:
            bias, mask = affine_bias_fit(lines, samples, lat, lon,
                                         np.full(len(cps), config.h0), rpc,
                                         config.ransac.inlier_threshold)
        except EstimationError as exc:
            raise MatchFailure(str(exc)) from exc
        model = RfmRectifier(rpc=rpc, ref_geo=ref_geo, bias=bias, h0=config.h0)
    else:
        need = min_sample_size(config.model)
        if len(cps) < need:
            raise MatchFailure(f"{config.model} needs >= {need} control points, got {len(cps)}")
        src = np.array([[cp.sensed_x, cp.sensed_y] for cp in cps])
        dst = np.array([[cp.ref_x, cp.ref_y] for cp in cps])
        try:
            model, mask = ransac(src, dst, config.model, config.ransac)
        except EstimationError as exc:
            raise MatchFailure(str(exc)) from exc
    flagged = [replace_valid(cp, bool(ok)) for cp, ok in zip(cps, mask)]
    return model, flagged


def replace_valid(cp: ControlPoint, valid: bool) -> ControlPoint:
    return ControlPoint(cp.sensed_x, cp.sensed_y, cp.ref_x, cp.ref_y, cp.score, valid)


def rectify(sensed: Raster, model, ref_width: int, ref_height: int) -> Raster:
    """Resample the sensed image onto the reference grid."""
    return warp_resample(sensed, model, ref_width, ref_height)


def checkerboard_overlay(a: Raster, b: Raster, block: int = 64) -> Raster:
    """Alternate square blocks from two equally sized rasters (inspection aid)."""
    if a.data.shape != b.data.shape:
        raise ValueError("overlay inputs must have equal size")
    h, w = a.data.shape
    ys, xs = np.mgrid[0:h, 0:w]
    take_a = ((ys // block) + (xs // block)) % 2 == 0
    return Raster(np.where(take_a, a.data, b.data))


def compute_metrics(cps: list[ControlPoint], truth, elapsed: float,
                    correct_threshold: float = 1.5) -> RegistrationMetrics:
    """Score matches against a truth model mapping sensed->reference coords.

    A control point is correct when its reference location is within the
    threshold of the truth reprojection; the ratio counts *all* matched
    points (outliers included), and the RMSE is taken over correct points
    only. ``truth`` may also be an (N, 4) array of manually picked
    sensed/reference pairs, from which a projective model is fitted first.
    """
    if not cps:
        raise ValueError("metrics need at least one matched control point")
    model = truth if hasattr(truth, "apply") else truth_from_manual_cps(truth)
    sx = np.array([cp.sensed_x for cp in cps])
    sy = np.array([cp.sensed_y for cp in cps])
    tx, ty = model.apply(sx, sy)
    err = np.hypot(np.array([cp.ref_x for cp in cps]) - tx,
                   np.array([cp.ref_y for cp in cps]) - ty)
    correct = err <= correct_threshold
    ncm = int(correct.sum())
    rmse = float(np.sqrt(np.mean(err[correct] ** 2))) if ncm else float("nan")
    return RegistrationMetrics(ncm=ncm, cmr=ncm / len(cps), rmse=rmse, mt=float(elapsed))


def truth_from_manual_cps(pairs):
    """Projective truth model from manually selected (sx, sy, rx, ry) rows."""
    from .geometry import estimate_projective
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 4:
        raise ValueError("manual control points must be (N, 4): sx, sy, rx, ry")
    return estimate_projective(arr[:, :2], arr[:, 2:])


def harmonize_resolution(sensed: Raster, sensed_geo: GeoRef,
                         reference: Raster, ref_geo: GeoRef, tol: float = 1.05):
    """Downsample the finer of the two images to the coarser resolution.

    Returns (sensed, sensed_geo, reference, ref_geo), replacing the finer
    side by an anti-aliased, uniformly decimated version whose
    geo-referencing is adjusted accordingly. Images within ``tol`` of each
    other are left untouched.
    """
    ps, pr = sensed_geo.pixel_size, ref_geo.pixel_size
    if ps * tol < pr:
        image, geo = _downsample(sensed, sensed_geo, pr / ps)
        return image, geo, reference, ref_geo
    if pr * tol < ps:
        image, geo = _downsample(reference, ref_geo, ps / pr)
        return sensed, sensed_geo, image, geo
    return sensed, sensed_geo, reference, ref_geo


def _downsample(image: Raster, geo: GeoRef, factor: float):
    out_w = max(2, int(round(image.width / factor)))
    out_h = max(2, int(round(image.height / factor)))
    smoothed = Raster(np.clip(smooth_dilated(image.data, 0.5 * factor, rate=1), 0.0, 1.0))
    scale = AffineTransform(a0=0.0, a1=1.0 / factor, a2=0.0,
                            b0=0.0, b1=0.0, b2=1.0 / factor)
    resampled = warp_resample(smoothed, scale, out_w, out_h)
    new_geo = GeoRef(a=geo.a * factor, d=geo.d * factor, b=geo.b * factor,
                     e=geo.e * factor, c=geo.c, f=geo.f)
    return resampled, new_geo


@dataclass
class RegistrationResult:
    cps: list
    model: object
    rectified: Raster
    metrics: RegistrationMetrics | None
    elapsed: float


def register_images(sensed: Raster, reference: Raster, config: MatchConfig,
                    sensed_geo: GeoRef | None = None, ref_geo: GeoRef | None = None,
                    rpc: RpcModel | None = None, truth=None) -> RegistrationResult:
    """End-to-end run: detect, refine, rectify, and (with truth) score."""
    if config.model != "rfm_affine" and sensed_geo is not None and ref_geo is not None:
        sensed, sensed_geo, reference, ref_geo = harmonize_resolution(
            sensed, sensed_geo, reference, ref_geo)
    start = time.perf_counter()
    cps = detect_cps(sensed, reference, config, sensed_geo, ref_geo, rpc)
    model, cps = refine_and_reject(cps, config, rpc, ref_geo)
    elapsed = time.perf_counter() - start
    rectified = rectify(sensed, model, reference.width, reference.height)
    metrics = None
    if truth is not None:
        metrics = compute_metrics(cps, truth, elapsed, config.correct_threshold)
    return RegistrationResult(cps=cps, model=model, rectified=rectified,
                              metrics=metrics, elapsed=elapsed)


# ---------------------------------------------------------------------------
# Control point CSV I/O
# ---------------------------------------------------------------------------

def save_cps(cps: list[ControlPoint], path) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sensed_x", "sensed_y", "ref_x", "ref_y", "score", "valid"])
        for cp in cps:
            writer.writerow([repr(float(cp.sensed_x)), repr(float(cp.sensed_y)),
                             repr(float(cp.ref_x)), repr(float(cp.ref_y)),
                             repr(float(cp.score)), int(cp.valid)])


def load_cps(path) -> list[ControlPoint]:
    cps = []
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:4] != ["sensed_x", "sensed_y", "ref_x", "ref_y"]:
            raise ValueError(f"unexpected control point header in {path}")
        for row in reader:
            cps.append(ControlPoint(float(row[0]), float(row[1]), float(row[2]),
                                    float(row[3]), float(row[4]), bool(int(row[5]))))
    return cps


def load_manual_cps(path) -> np.ndarray:
    """Manual truth pairs: CSV rows sensed_x,sensed_y,ref_x,ref_y."""
    rows = []
    with open(path, "r", newline="", encoding="ascii") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or row[0].strip().startswith("#") or row[0] == "sensed_x":
                continue
            rows.append([float(v) for v in row[:4]])
    return np.asarray(rows, dtype=np.float64)
