"""Geometric models, robust estimation, the rational camera model, warping.

Transform conventions: every model maps source pixel coordinates (x, y) to
destination coordinates via ``apply``; ``apply_inverse`` goes the other way
(closed form for affine/projective, damped Newton for the second-order
polynomial). ``warp_resample`` inverse-maps each output pixel through the
given source->output model and samples the source bilinearly.

The rational camera model relates normalized ground coordinates
(lat, lon, height) to normalized image coordinates (line, sample) through
ratios of 20-term cubic polynomials. Term order for coefficient i (1-based):

    1, L, P, H, LP, LH, PH, L^2, P^2, H^2, LPH, L^3, LP^2, LH^2, L^2 P,
    P^3, PH^2, L^2 H, P^2 H, H^3

with P = normalized latitude, L = normalized longitude, H = normalized
height. World coordinates pair with geo-referencing as (X, Y) = (lon, lat).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .raster import GeoRef, Raster, bilinear_sample


class EstimationError(ValueError):
    """Degenerate configuration or no consensus for a model fit."""


# ---------------------------------------------------------------------------
# Transform models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineTransform:
    """x' = a0 + a1*x + a2*y ; y' = b0 + b1*x + b2*y."""

    a0: float
    a1: float
    a2: float
    b0: float
    b1: float
    b2: float

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(0.0, 1.0, 0.0, 0.0, 0.0, 1.0)

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineTransform":
        return cls(dx, 1.0, 0.0, dy, 0.0, 1.0)

    def apply(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return (self.a0 + self.a1 * x + self.a2 * y,
                self.b0 + self.b1 * x + self.b2 * y)

    def inverse(self) -> "AffineTransform":
        det = self.a1 * self.b2 - self.a2 * self.b1
        if abs(det) < 1e-15:
            raise EstimationError("affine transform is not invertible")
        ia1, ia2 = self.b2 / det, -self.a2 / det
        ib1, ib2 = -self.b1 / det, self.a1 / det
        return AffineTransform(
            a0=-(ia1 * self.a0 + ia2 * self.b0), a1=ia1, a2=ia2,
            b0=-(ib1 * self.a0 + ib2 * self.b0), b1=ib1, b2=ib2)

    def apply_inverse(self, x, y):
        return self.inverse().apply(x, y)


@dataclass(frozen=True)
class ProjectiveTransform:
    """Homogeneous 3x3 mapping, normalized so matrix[2, 2] == 1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError("projective matrix must be 3x3")
        if abs(m[2, 2]) < 1e-15 or abs(np.linalg.det(m)) < 1e-15:
            raise EstimationError("projective matrix is singular")
        m = m / m[2, 2]
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "ProjectiveTransform":
        return cls(np.eye(3))

    def apply(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        m = self.matrix
        wq = m[2, 0] * x + m[2, 1] * y + m[2, 2]
        return ((m[0, 0] * x + m[0, 1] * y + m[0, 2]) / wq,
                (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / wq)

    def inverse(self) -> "ProjectiveTransform":
        return ProjectiveTransform(np.linalg.inv(self.matrix))

    def apply_inverse(self, x, y):
        return self.inverse().apply(x, y)


def _poly2_design(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=-1)


@dataclass(frozen=True)
class Poly2Transform:
    """Full second-order bivariate polynomial per output axis (12 terms)."""

    coeffs_x: np.ndarray  # (6,) for [1, x, y, x^2, xy, y^2]
    coeffs_y: np.ndarray

    def __post_init__(self):
        cx = np.asarray(self.coeffs_x, dtype=np.float64)
        cy = np.asarray(self.coeffs_y, dtype=np.float64)
        if cx.shape != (6,) or cy.shape != (6,):
            raise ValueError("second-order transform needs 6 coefficients per axis")
        if not (np.all(np.isfinite(cx)) and np.all(np.isfinite(cy))):
            raise ValueError("non-finite polynomial coefficients")
        cx.flags.writeable = False
        cy.flags.writeable = False
        object.__setattr__(self, "coeffs_x", cx)
        object.__setattr__(self, "coeffs_y", cy)

    def apply(self, x, y):
        d = _poly2_design(x, y)
        return d @ self.coeffs_x, d @ self.coeffs_y

    def apply_inverse(self, x, y, tol: float = 1e-9, max_iter: int = 50):
        """Invert per point with damped Newton, seeded by the linear part."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        x, y = np.broadcast_arrays(x, y)
        seed_affine = AffineTransform(self.coeffs_x[0], self.coeffs_x[1], self.coeffs_x[2],
                                      self.coeffs_y[0], self.coeffs_y[1], self.coeffs_y[2])
        u, v = seed_affine.inverse().apply(x, y)
        u, v = np.array(u, dtype=np.float64), np.array(v, dtype=np.float64)
        for _ in range(max_iter):
            fx, fy = self.apply(u, v)
            rx, ry = fx - x, fy - y
            if max(np.abs(rx).max(initial=0.0), np.abs(ry).max(initial=0.0)) < tol:
                break
            cx, cy = self.coeffs_x, self.coeffs_y
            j00 = cx[1] + 2 * cx[3] * u + cx[4] * v
            j01 = cx[2] + cx[4] * u + 2 * cx[5] * v
            j10 = cy[1] + 2 * cy[3] * u + cy[4] * v
            j11 = cy[2] + cy[4] * u + 2 * cy[5] * v
            det = j00 * j11 - j01 * j10
            det = np.where(np.abs(det) < 1e-15, np.nan, det)
            u = u - (j11 * rx - j01 * ry) / det
            v = v - (-j10 * rx + j00 * ry) / det
        return u, v


# ---------------------------------------------------------------------------
# Least-squares estimators (with Hartley-style normalization)
# ---------------------------------------------------------------------------

def _to_points(pts) -> np.ndarray:
    arr = np.asarray(pts, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("points must be an (N, 2) array of (x, y)")
    return arr


def _normalizer(pts: np.ndarray) -> np.ndarray:
    """Similarity that moves the centroid to the origin at mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    dist = np.sqrt(((pts - centroid) ** 2).sum(axis=1)).mean()
    scale = math.sqrt(2.0) / dist if dist > 1e-12 else 1.0
    return np.array([[scale, 0.0, -scale * centroid[0]],
                     [0.0, scale, -scale * centroid[1]],
                     [0.0, 0.0, 1.0]])


def _apply_h(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    q = np.column_stack([pts, np.ones(len(pts))]) @ h.T
    return q[:, :2] / q[:, 2:3]


def estimate_affine(src, dst) -> AffineTransform:
    """Least-squares affine from >= 3 non-collinear point pairs."""
    src, dst = _to_points(src), _to_points(dst)
    if len(src) != len(dst) or len(src) < 3:
        raise EstimationError("affine estimation needs >= 3 point pairs")
    ts, td = _normalizer(src), _normalizer(dst)
    ns, nd = _apply_h(ts, src), _apply_h(td, dst)
    design = np.column_stack([np.ones(len(ns)), ns])
    if np.linalg.matrix_rank(design) < 3:
        raise EstimationError("degenerate (collinear) affine sample")
    cx, *_ = np.linalg.lstsq(design, nd[:, 0], rcond=None)
    cy, *_ = np.linalg.lstsq(design, nd[:, 1], rcond=None)
    hn = np.array([[cx[1], cx[2], cx[0]], [cy[1], cy[2], cy[0]], [0.0, 0.0, 1.0]])
    h = np.linalg.inv(td) @ hn @ ts
    return AffineTransform(a0=h[0, 2], a1=h[0, 0], a2=h[0, 1],
                           b0=h[1, 2], b1=h[1, 0], b2=h[1, 1])


def estimate_projective(src, dst) -> ProjectiveTransform:
    """Normalized direct linear transform from >= 4 pairs (no 3 collinear)."""
    src, dst = _to_points(src), _to_points(dst)
    if len(src) != len(dst) or len(src) < 4:
        raise EstimationError("projective estimation needs >= 4 point pairs")
    ts, td = _normalizer(src), _normalizer(dst)
    ns, nd = _apply_h(ts, src), _apply_h(td, dst)
    rows = []
    for (x, y), (u, v) in zip(ns, nd):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    a = np.asarray(rows)
    _, sv, vt = np.linalg.svd(a)
    if sv[-2] < 1e-9 * sv[0]:
        raise EstimationError("degenerate projective sample")
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    if abs(h[2, 2]) < 1e-12:
        raise EstimationError("projective solution at infinity")
    return ProjectiveTransform(h)


def estimate_poly2(src, dst) -> Poly2Transform:
    """Least-squares second-order polynomial from >= 6 pairs."""
    src, dst = _to_points(src), _to_points(dst)
    if len(src) != len(dst) or len(src) < 6:
        raise EstimationError("second-order estimation needs >= 6 point pairs")
    design = _poly2_design(src[:, 0], src[:, 1])
    if np.linalg.matrix_rank(design) < 6:
        raise EstimationError("degenerate second-order sample")
    cx, *_ = np.linalg.lstsq(design, dst[:, 0], rcond=None)
    cy, *_ = np.linalg.lstsq(design, dst[:, 1], rcond=None)
    return Poly2Transform(cx, cy)


# ---------------------------------------------------------------------------
# RANSAC
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold: float = 1.5
    max_iterations: int = 2000
    confidence: float = 0.995
    seed: int = 0

    def __post_init__(self):
        if self.inlier_threshold <= 0:
            raise ValueError("inlier threshold must be positive")


_MODELS = {
    "affine": (estimate_affine, 3),
    "projective": (estimate_projective, 4),
    "poly2": (estimate_poly2, 6),
}


def min_sample_size(kind: str) -> int:
    return _MODELS[kind][1]


def ransac(src, dst, kind: str = "projective",
           config: RansacConfig | None = None):
    """Hypothesize-and-verify model fit; returns (model, inlier_mask).

    The final model is refit by least squares on the best consensus set and
    the mask recomputed from that refit. Deterministic for a fixed seed.
    """
    if kind not in _MODELS:
        raise ValueError(f"unknown model kind {kind!r}")
    estimator, min_n = _MODELS[kind]
    config = config or RansacConfig()
    src, dst = _to_points(src), _to_points(dst)
    n = len(src)
    if n < min_n or len(dst) != n:
        raise EstimationError(f"{kind} RANSAC needs >= {min_n} pairs, got {n}")

    rng = np.random.default_rng(config.seed)
    best_mask = None
    best_count = 0
    best_err = np.inf
    needed = config.max_iterations
    it = 0
    while it < min(needed, config.max_iterations):
        it += 1
        sample = rng.choice(n, size=min_n, replace=False)
        try:
            model = estimator(src[sample], dst[sample])
        except EstimationError:
            continue
        px, py = model.apply(src[:, 0], src[:, 1])
        err = np.hypot(px - dst[:, 0], py - dst[:, 1])
        mask = err < config.inlier_threshold
        count = int(mask.sum())
        mean_err = float(err[mask].mean()) if count else np.inf
        if count > best_count or (count == best_count and mean_err < best_err):
            best_count, best_err, best_mask = count, mean_err, mask
            ratio = count / n
            if 0.0 < ratio < 1.0:
                denom = math.log(max(1.0 - ratio ** min_n, 1e-12))
                needed = min(config.max_iterations,
                             int(math.ceil(math.log(1.0 - config.confidence) / denom)))
            elif ratio >= 1.0:
                break

    # a minimal sample always reprojects itself, so demand evidence beyond it
    needed_count = min_n if n == min_n else min_n + 1
    if best_mask is None or best_count < needed_count:
        raise EstimationError(f"no {kind} consensus of >= {needed_count} inliers")
    model = estimator(src[best_mask], dst[best_mask])
    px, py = model.apply(src[:, 0], src[:, 1])
    err = np.hypot(px - dst[:, 0], py - dst[:, 1])
    return model, err < config.inlier_threshold


# ---------------------------------------------------------------------------
# Rational camera model
# ---------------------------------------------------------------------------

RPC_SCALAR_KEYS = ("LINE_OFF", "SAMP_OFF", "LAT_OFF", "LONG_OFF", "HEIGHT_OFF",
                   "LINE_SCALE", "SAMP_SCALE", "LAT_SCALE", "LONG_SCALE", "HEIGHT_SCALE")


def rpc_terms(P, L, H) -> np.ndarray:
    """The 20 cubic monomials in the declared coefficient order (last axis)."""
    P = np.asarray(P, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    one = np.ones_like(P + L + H)
    return np.stack([one, L, P, H, L * P, L * H, P * H, L * L, P * P, H * H,
                     L * P * H, L ** 3, L * P * P, L * H * H, L * L * P,
                     P ** 3, P * H * H, L * L * H, P * P * H, H ** 3], axis=-1)


@dataclass(frozen=True)
class RpcModel:
    line_off: float
    samp_off: float
    lat_off: float
    lon_off: float
    height_off: float
    line_scale: float
    samp_scale: float
    lat_scale: float
    lon_scale: float
    height_scale: float
    num_l: np.ndarray
    den_l: np.ndarray
    num_s: np.ndarray
    den_s: np.ndarray

    def __post_init__(self):
        for name in ("num_l", "den_l", "num_s", "den_s"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (20,):
                raise ValueError(f"{name} must hold exactly 20 coefficients")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if min(self.line_scale, self.samp_scale, self.lat_scale,
               self.lon_scale, self.height_scale) <= 0:
            raise ValueError("all RPC scales must be positive")
        if abs(self.den_l[0] - 1.0) > 1e-9 or abs(self.den_s[0] - 1.0) > 1e-9:
            raise ValueError("RPC denominator constant terms must be 1")

    # -- normalization helpers ------------------------------------------------
    def normalize_ground(self, lat, lon, h):
        return ((np.asarray(lat, np.float64) - self.lat_off) / self.lat_scale,
                (np.asarray(lon, np.float64) - self.lon_off) / self.lon_scale,
                (np.asarray(h, np.float64) - self.height_off) / self.height_scale)

    def normalize_image(self, line, sample):
        return ((np.asarray(line, np.float64) - self.line_off) / self.line_scale,
                (np.asarray(sample, np.float64) - self.samp_off) / self.samp_scale)

    def denormalize_image(self, line_n, sample_n):
        return (line_n * self.line_scale + self.line_off,
                sample_n * self.samp_scale + self.samp_off)

    def forward_normalized(self, lat_n, lon_n, h_n):
        terms = rpc_terms(lat_n, lon_n, h_n)
        den_line = terms @ self.den_l
        den_samp = terms @ self.den_s
        if np.any(np.abs(den_line) < 1e-10) or np.any(np.abs(den_samp) < 1e-10):
            raise EstimationError("RPC denominator vanishes near the query point")
        return (terms @ self.num_l) / den_line, (terms @ self.num_s) / den_samp


def rfm_forward(rpc: RpcModel, lat, lon, h):
    """Ground (lat, lon, height) to image (line, sample) in pixels."""
    lat_n, lon_n, h_n = rpc.normalize_ground(lat, lon, h)
    for name, v in (("lat", lat_n), ("lon", lon_n), ("height", h_n)):
        if np.any(np.abs(v) >= 1.2):
            raise EstimationError(
                f"normalized {name} {np.max(np.abs(v)):.3f} outside the (-1.2, 1.2) "
                "validity margin")
    line_n, samp_n = rpc.forward_normalized(lat_n, lon_n, h_n)
    return rpc.denormalize_image(line_n, samp_n)


def rfm_inverse(rpc: RpcModel, line, sample, h,
                tol: float = 1e-6, max_iter: int = 50):
    """Image (line, sample) to ground (lat, lon) at a fixed height.

    Damped Newton on the normalized 2x2 system with central-difference
    Jacobian, seeded at the ground offsets. Raises on non-convergence.
    """
    line_n, samp_n = rpc.normalize_image(line, sample)
    target = np.stack(np.broadcast_arrays(line_n, samp_n), axis=-1).astype(np.float64)
    flat = target.reshape(-1, 2)
    h_n = float((h - rpc.height_off) / rpc.height_scale)
    out = np.empty_like(flat)
    for i, (tl, ts) in enumerate(flat):
        out[i] = _invert_one(rpc, tl, ts, h_n, tol, max_iter)
    lat_n, lon_n = out[:, 0].reshape(target.shape[:-1]), out[:, 1].reshape(target.shape[:-1])
    lat = lat_n * rpc.lat_scale + rpc.lat_off
    lon = lon_n * rpc.lon_scale + rpc.lon_off
    if lat.ndim == 0:
        return float(lat), float(lon)
    return lat, lon


def _invert_one(rpc: RpcModel, tl: float, ts: float, h_n: float,
                tol: float, max_iter: int):
    p, l = 0.0, 0.0  # normalized lat / lon seed: the offsets
    delta = 1e-6
    fl, fs = rpc.forward_normalized(p, l, h_n)
    res = math.hypot(fl - tl, fs - ts)
    for _ in range(max_iter):
        if res < tol:
            return p, l
        flp, fsp = rpc.forward_normalized(p + delta, l, h_n)
        flm, fsm = rpc.forward_normalized(p - delta, l, h_n)
        fll, fsl = rpc.forward_normalized(p, l + delta, h_n)
        flk, fsk = rpc.forward_normalized(p, l - delta, h_n)
        j = np.array([[(flp - flm) / (2 * delta), (fll - flk) / (2 * delta)],
                      [(fsp - fsm) / (2 * delta), (fsl - fsk) / (2 * delta)]])
        try:
            step = np.linalg.solve(j, np.array([fl - tl, fs - ts]))
        except np.linalg.LinAlgError as exc:
            raise EstimationError("singular Jacobian in RPC inversion") from exc
        lam = 1.0
        for _ in range(12):
            pn, ln = p - lam * step[0], l - lam * step[1]
            try:
                nfl, nfs = rpc.forward_normalized(pn, ln, h_n)
            except EstimationError:
                lam *= 0.5
                continue
            nres = math.hypot(nfl - tl, nfs - ts)
            if nres < res:
                p, l, fl, fs, res = pn, ln, nfl, nfs, nres
                break
            lam *= 0.5
        else:
            break
    if res < tol:
        return p, l
    raise EstimationError(f"RPC inversion did not converge (residual {res:.3e})")


def load_rpc(path) -> RpcModel:
    """Read the 'KEY: value' RPC text format."""
    values: dict[str, float] = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition(":")
            values[key.strip().upper()] = float(val)
    try:
        coeffs = {}
        for prefix, attr in (("LINE_NUM", "num_l"), ("LINE_DEN", "den_l"),
                             ("SAMP_NUM", "num_s"), ("SAMP_DEN", "den_s")):
            coeffs[attr] = np.array([values[f"{prefix}_COEFF_{i}"] for i in range(1, 21)])
        return RpcModel(
            line_off=values["LINE_OFF"], samp_off=values["SAMP_OFF"],
            lat_off=values["LAT_OFF"], lon_off=values["LONG_OFF"],
            height_off=values["HEIGHT_OFF"],
            line_scale=values["LINE_SCALE"], samp_scale=values["SAMP_SCALE"],
            lat_scale=values["LAT_SCALE"], lon_scale=values["LONG_SCALE"],
            height_scale=values["HEIGHT_SCALE"], **coeffs)
    except KeyError as exc:
        raise ValueError(f"RPC file {path} is missing key {exc}") from exc


def save_rpc(rpc: RpcModel, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for key, value in zip(RPC_SCALAR_KEYS,
                              (rpc.line_off, rpc.samp_off, rpc.lat_off, rpc.lon_off,
                               rpc.height_off, rpc.line_scale, rpc.samp_scale,
                               rpc.lat_scale, rpc.lon_scale, rpc.height_scale)):
            fh.write(f"{key}: {float(value)!r}\n")
        for prefix, arr in (("LINE_NUM", rpc.num_l), ("LINE_DEN", rpc.den_l),
                            ("SAMP_NUM", rpc.num_s), ("SAMP_DEN", rpc.den_s)):
            for i, c in enumerate(arr, start=1):
                fh.write(f"{prefix}_COEFF_{i}: {float(c)!r}\n")


# ---------------------------------------------------------------------------
# Local geometric correction and bias compensation
# ---------------------------------------------------------------------------

def local_affine_from_rfm(rpc: RpcModel, ref_geo: GeoRef, ip_x: float, ip_y: float,
                          half_size: int, h0: float = 0.0):
    """Affine sensed->reference fitted over a patch's corners and center.

    The five points (patch corners plus center, sensed pixel space) are
    projected to ground with the camera model at constant height h0, then to
    reference pixels through the geo-referencing. Returns (affine, rms) with
    the fit residual in pixels.
    """
    xs = np.array([ip_x - half_size, ip_x + half_size, ip_x - half_size,
                   ip_x + half_size, ip_x], dtype=np.float64)
    ys = np.array([ip_y - half_size, ip_y - half_size, ip_y + half_size,
                   ip_y + half_size, ip_y], dtype=np.float64)
    lat, lon = rfm_inverse(rpc, ys, xs, h0)  # line = y, sample = x
    rx, ry = ref_geo.geo_to_pixel(lon, lat)  # world (X, Y) = (lon, lat)
    affine = estimate_affine(np.column_stack([xs, ys]), np.column_stack([rx, ry]))
    px, py = affine.apply(xs, ys)
    rms = float(np.sqrt(np.mean((px - rx) ** 2 + (py - ry) ** 2)))
    return affine, rms


@dataclass(frozen=True)
class AffineBias:
    """Image-space affine correction of systematic camera-model errors.

    line + (a0 + a1*line + a2*samp) and samp + (b0 + b1*line + b2*samp)
    reproduce the camera model's projection of the matched ground points.
    """

    a0: float
    a1: float
    a2: float
    b0: float
    b1: float
    b2: float
    residual_rms: float

    def correct(self, line, sample):
        """Camera-projected (line, sample) -> bias-compensated image coords.

        Solves the linear system (1+a1)*r + a2*c = line - a0, etc., i.e.
        the image coordinates whose compensated position equals the
        projection.
        """
        line = np.asarray(line, dtype=np.float64)
        sample = np.asarray(sample, dtype=np.float64)
        m = np.array([[1.0 + self.a1, self.a2], [self.b1, 1.0 + self.b2]])
        det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
        if abs(det) < 1e-12:
            raise EstimationError("bias compensation model is not invertible")
        rl = line - self.a0
        rc = sample - self.b0
        return ((m[1, 1] * rl - m[0, 1] * rc) / det,
                (-m[1, 0] * rl + m[0, 0] * rc) / det)


def affine_bias_fit(lines, samples, lats, lons, heights, rpc: RpcModel,
                    inlier_threshold: float = 1.5) -> tuple[AffineBias, np.ndarray]:
    """Fit the affine bias from control points, iteratively rejecting outliers.

    Inputs are sensed image coordinates (lines, samples) and the matched
    ground coordinates. Each round fits by least squares and drops the
    points whose image-space residual exceeds a trimming cap that halves
    toward the inlier threshold; the worst shell goes first, so a handful
    of gross outliers cannot drag the fit into rejecting the consensus.
    Stops when every surviving residual is within the threshold; fewer than
    4 survivors is an error. Returns the bias and the surviving-point mask.
    """
    lines = np.asarray(lines, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    if len(lines) < 4:
        raise EstimationError("bias fit needs >= 4 control points")
    proj_l, proj_s = rfm_forward(rpc, lats, lons, heights)
    active = np.ones(len(lines), dtype=bool)
    coeffs = None
    for _ in range(len(lines) + 1):
        if active.sum() < 4:
            raise EstimationError("bias fit rejected too many control points")
        design = np.column_stack([np.ones(int(active.sum())),
                                  lines[active], samples[active]])
        ca, *_ = np.linalg.lstsq(design, (proj_l - lines)[active], rcond=None)
        cb, *_ = np.linalg.lstsq(design, (proj_s - samples)[active], rcond=None)
        coeffs = (ca, cb)
        res_l = lines + ca[0] + ca[1] * lines + ca[2] * samples - proj_l
        res_s = samples + cb[0] + cb[1] * lines + cb[2] * samples - proj_s
        err = np.hypot(res_l, res_s)
        worst = float(err[active].max())
        if worst <= inlier_threshold:
            break
        cut = max(inlier_threshold, 0.5 * worst)
        active = active & (err <= cut)
    ca, cb = coeffs
    res = np.hypot(lines + ca[0] + ca[1] * lines + ca[2] * samples - proj_l,
                   samples + cb[0] + cb[1] * lines + cb[2] * samples - proj_s)
    rms = float(np.sqrt(np.mean(res[active] ** 2)))
    bias = AffineBias(a0=float(ca[0]), a1=float(ca[1]), a2=float(ca[2]),
                      b0=float(cb[0]), b1=float(cb[1]), b2=float(cb[2]),
                      residual_rms=rms)
    return bias, active


@dataclass(frozen=True)
class RfmRectifier:
    """Reference-grid to sensed-image mapping through the corrected camera.

    Used to resample a camera-model image onto a geo-referenced grid:
    output pixel -> world -> ground at constant height -> camera projection
    -> bias compensation -> sensed pixel.
    """

    rpc: RpcModel
    ref_geo: GeoRef
    bias: AffineBias
    h0: float = 0.0

    def apply_inverse(self, x, y):
        lon, lat = self.ref_geo.pixel_to_geo(x, y)
        line, sample = rfm_forward(self.rpc, lat, lon, np.full_like(np.asarray(lat, np.float64), self.h0))
        line_c, samp_c = self.bias.correct(line, sample)
        return samp_c, line_c  # pixel (x, y) = (sample, line)


# ---------------------------------------------------------------------------
# Warping
# ---------------------------------------------------------------------------

def warp_resample(image, transform, out_width: int, out_height: int) -> Raster:
    """Resample ``image`` through a source->output transform.

    Each output pixel is inverse-mapped into the source and sampled
    bilinearly; samples outside the source get 0.
    """
    src = image if isinstance(image, Raster) else Raster(np.asarray(image, dtype=np.float64))
    xs, ys = np.meshgrid(np.arange(out_width, dtype=np.float64),
                         np.arange(out_height, dtype=np.float64))
    sx, sy = transform.apply_inverse(xs.ravel(), ys.ravel())
    values, _ = bilinear_sample(src, sx, sy)
    return Raster(values.reshape(out_height, out_width))
