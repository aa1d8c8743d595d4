"""Normalized cross-correlation over 3-D feature volumes, naive and fast.

``ncc_naive`` evaluates the correlation coefficient by direct summation at
every valid offset and serves as the correctness oracle. ``fast_ncc``
factors the same expression into a cross-correlation numerator (computed
per channel with FFTs, padded to 5-smooth sizes) plus window sums of the
features and squared features (computed with summed-area tables), and must
agree with the naive path to 1e-5 at every valid offset.

Degenerate windows - those whose centered energy is at the level of
floating-point cancellation noise - are flagged invalid rather than scored:
a 0 score is a legitimate correlation value and must not be conflated with
"undefined". Both paths share the same degeneracy rule so their flags agree.
All accumulation is double precision regardless of the feature dtype; the
factored form R_SS - R_S^2/count cancels catastrophically for near-constant
windows otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sp_fft

from .descriptor import FeatureVolume

DEGENERACY_FLOOR = 1e-12


class DegenerateTemplateError(ValueError):
    """Template has (numerically) zero variance; no offset can be scored."""


def _as_volume64(volume) -> np.ndarray:
    arr = volume.data if isinstance(volume, FeatureVolume) else np.asarray(volume)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError("expected a (height, width, z) feature volume")
    return arr


def _check_sizes(template: np.ndarray, search: np.ndarray):
    tn, tm, tz = template.shape
    sn, sm, sz = search.shape
    if tz != sz:
        raise ValueError(f"channel mismatch: template z={tz}, search z={sz}")
    if tm > sm or tn > sn:
        raise ValueError(f"template {tm}x{tn} exceeds search {sm}x{sn}")
    return tn, tm, sn, sm, tz


def _degenerate(energy, scale):
    """Shared rule: centered window energy at or below cancellation noise.

    The relative term guards the integral-image path, where the subtraction
    R_SS - R_S^2/count of near-equal double-precision sums leaves residue
    proportional to the window's raw energy.
    """
    return energy <= DEGENERACY_FLOOR * np.maximum(1.0, scale)


@dataclass(frozen=True)
class TemplateStats:
    """Whole-template sums entering the factored correlation."""

    r_t: float
    r_tt: float
    count: int
    denom_t: float

    @classmethod
    def from_template(cls, template) -> "TemplateStats":
        t = _as_volume64(template)
        r_t = float(t.sum())
        r_tt = float((t * t).sum())
        count = t.size
        denom_t = max(r_tt - r_t * r_t / count, 0.0)
        return cls(r_t=r_t, r_tt=r_tt, count=count, denom_t=denom_t)

    @property
    def is_degenerate(self) -> bool:
        return bool(_degenerate(self.denom_t, self.r_tt))


@dataclass(frozen=True)
class SumTable:
    """Exclusive-prefix summed-area table, (H+1, W+1).

    First row and column are zero, so the four-corner rectangle rule needs
    no special cases at x=0 / y=0.
    """

    table: np.ndarray

    @property
    def width(self) -> int:
        return self.table.shape[1] - 1

    @property
    def height(self) -> int:
        return self.table.shape[0] - 1


def _prefix_table(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    table = np.zeros((h + 1, w + 1), dtype=np.float64)
    # cumulative column sum then row sum - the classic two-addition recursion
    table[1:, 1:] = plane.cumsum(axis=0).cumsum(axis=1)
    return table


def build_sum_tables(search) -> tuple[SumTable, SumTable]:
    """Summed-area tables of the channel-summed features and squared features.

    The channel dimension is collapsed before table construction (the window
    sums are taken over all of x, y, z anyway), giving one 2-D table instead
    of z with identical results.
    """
    s = _as_volume64(search)
    p = s.sum(axis=2)
    q = np.einsum("ijk,ijk->ij", s, s)
    return SumTable(_prefix_table(p)), SumTable(_prefix_table(q))


def region_sum(table: SumTable, x: int, y: int, w: int, h: int) -> float:
    """Sum over the w x h rectangle with top-left corner at pixel (x, y)."""
    if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > table.width or y + h > table.height:
        raise ValueError(f"rectangle ({x}, {y}, {w}, {h}) out of range "
                         f"for {table.width}x{table.height} table")
    t = table.table
    return float(t[y + h, x + w] - t[y, x + w] - t[y + h, x] + t[y, x])


def _window_sums(table: SumTable, w: int, h: int) -> np.ndarray:
    """Four-corner rule evaluated at every valid offset at once."""
    t = table.table
    return t[h:, w:] - t[:-h, w:] - t[h:, :-w] + t[:-h, :-w]


@dataclass
class CorrelationSurface:
    """Correlation scores over all valid template offsets.

    ``scores[y, x]`` is the coefficient with the template's top-left placed
    at search pixel (x, y); invalid (degenerate-window) offsets hold NaN and
    are flagged False in ``valid``.
    """

    scores: np.ndarray
    valid: np.ndarray
    template_shape: tuple  # (n, m): height, width
    search_shape: tuple    # (N, M)

    @property
    def offsets_x(self) -> int:
        return self.scores.shape[1]

    @property
    def offsets_y(self) -> int:
        return self.scores.shape[0]


def ncc_naive(template, search) -> CorrelationSurface:
    """Direct-summation correlation coefficient at every valid offset.

    This is the oracle implementation: each window is explicitly centered
    and reduced. Quadratic in the window size; use ``fast_ncc`` for
    production sizes.
    """
    t = _as_volume64(template)
    s = _as_volume64(search)
    tn, tm, sn, sm, _ = _check_sizes(t, s)

    t_flat = t.reshape(-1)
    tc = t_flat - t_flat.mean()
    denom_t = float(tc @ tc)
    if _degenerate(denom_t, float(t_flat @ t_flat)):
        raise DegenerateTemplateError("template window has zero variance")

    ny, nx = sn - tn + 1, sm - tm + 1
    scores = np.full((ny, nx), np.nan, dtype=np.float64)
    valid = np.zeros((ny, nx), dtype=bool)
    count = t.size
    for y in range(ny):
        for x in range(nx):
            w = s[y:y + tn, x:x + tm, :].reshape(-1)
            mean = w.mean()
            wc = w - mean
            energy = float(wc @ wc)
            scale = energy + count * mean * mean  # == Sum w^2, window raw energy
            if _degenerate(energy, scale):
                continue
            scores[y, x] = float(wc @ tc) / math.sqrt(energy * denom_t)
            valid[y, x] = True
    return CorrelationSurface(scores, valid, (tn, tm), (sn, sm))


def _next_smooth5(n: int) -> int:
    """Smallest integer >= n whose prime factors are all <= 5."""
    while True:
        m = n
        for p in (2, 3, 5):
            while m % p == 0:
                m //= p
        if m == 1:
            return n
        n += 1


def cross_corr_fft(search, template) -> np.ndarray:
    """Channel-summed sliding dot product via FFT (the factored numerator).

    Per channel, both planes are zero-padded to a common 5-smooth size of at
    least M+m-1 per axis; the search spectrum is multiplied by the conjugate
    template spectrum and inverted, and the per-channel surfaces are summed
    in fixed channel order before cropping to the valid offsets.
    """
    t = _as_volume64(template)
    s = _as_volume64(search)
    tn, tm, sn, sm, z = _check_sizes(t, s)
    fy = _next_smooth5(sn + tn - 1)
    fx = _next_smooth5(sm + tm - 1)
    ny, nx = sn - tn + 1, sm - tm + 1
    out = np.zeros((ny, nx), dtype=np.float64)
    for k in range(z):
        fs = sp_fft.rfft2(s[:, :, k], s=(fy, fx))
        ft = sp_fft.rfft2(t[:, :, k], s=(fy, fx))
        plane = sp_fft.irfft2(fs * np.conj(ft), s=(fy, fx))
        out += plane[:ny, :nx]
    return out


def fast_ncc(template, search) -> CorrelationSurface:
    """Factored correlation: FFT numerator plus integral-image window sums.

    Numerically equal to ``ncc_naive`` within 1e-5 at every valid offset and
    shares its degeneracy flags, but costs O(M N z log(M N z)) instead of
    O(m n z) per offset.
    """
    t = _as_volume64(template)
    s = _as_volume64(search)
    tn, tm, sn, sm, _ = _check_sizes(t, s)

    stats = TemplateStats.from_template(t)
    if stats.is_degenerate:
        raise DegenerateTemplateError("template window has zero variance")

    r_st = cross_corr_fft(s, t)
    table_s, table_ss = build_sum_tables(s)
    r_s = _window_sums(table_s, tm, tn)
    r_ss = _window_sums(table_ss, tm, tn)

    count = stats.count
    numerator = r_st - r_s * (stats.r_t / count)
    denom_s = np.maximum(r_ss - r_s * r_s / count, 0.0)
    valid = ~_degenerate(denom_s, r_ss)

    scores = np.full(denom_s.shape, np.nan, dtype=np.float64)
    np.divide(numerator, np.sqrt(denom_s * stats.denom_t),
              out=scores, where=valid)
    scores[~valid] = np.nan
    return CorrelationSurface(scores, valid, (tn, tm), (sn, sm))


def peak_locate(surface: CorrelationSurface, subpixel: bool = False):
    """Location and value of the maximum valid score.

    Ties break toward the smallest y, then smallest x. With ``subpixel`` a
    quadratic is fitted to the 3x3 neighborhood (when interior and valid)
    and the refined offset is clamped to +-0.5 pixel of the integer peak.
    """
    if not surface.valid.any():
        raise ValueError("correlation surface has no valid scores")
    masked = np.where(surface.valid, surface.scores, -np.inf)
    flat = int(np.argmax(masked))
    py, px = divmod(flat, surface.scores.shape[1])
    score = float(surface.scores[py, px])
    if not subpixel:
        return px, py, score

    ny, nx = surface.scores.shape
    if 0 < py < ny - 1 and 0 < px < nx - 1 \
            and surface.valid[py - 1:py + 2, px - 1:px + 2].all():
        s = surface.scores
        gx = 0.5 * (s[py, px + 1] - s[py, px - 1])
        gy = 0.5 * (s[py + 1, px] - s[py - 1, px])
        hxx = s[py, px + 1] - 2.0 * s[py, px] + s[py, px - 1]
        hyy = s[py + 1, px] - 2.0 * s[py, px] + s[py - 1, px]
        hxy = 0.25 * (s[py + 1, px + 1] - s[py + 1, px - 1]
                      - s[py - 1, px + 1] + s[py - 1, px - 1])
        det = hxx * hyy - hxy * hxy
        if det > 0 and hxx < 0:
            dx = -(hyy * gx - hxy * gy) / det
            dy = -(hxx * gy - hxy * gx) / det
            if abs(dx) <= 0.5 and abs(dy) <= 0.5:
                return float(px + dx), float(py + dy), score
    return float(px), float(py), score


@dataclass(frozen=True)
class ComplexityReport:
    """Multiplication counts of the fast and naive paths, and their ratio."""

    t1: float
    t2: float
    ratio: float


def complexity_estimate(m: int, n: int, M: int, N: int, z: int) -> ComplexityReport:
    """Closed-form operation-count model of fast vs naive correlation.

    t1 = 4*M*N*z*log2(M*N*z) multiplications for the transform-based path,
    t2 = 3*m*n*z*(M-m+1)*(N-n+1) for sliding direct evaluation. The FFT
    term models one volume-sized transform; per-channel 2-D transforms
    differ by constants, so treat the ratio as a model, not a measurement.
    """
    if min(m, n, M, N, z) <= 0:
        raise ValueError("all sizes must be positive")
    if m > M or n > N:
        raise ValueError("template must not exceed the search window")
    t1 = 4.0 * M * N * z * math.log2(M * N * z)
    t2 = 3.0 * m * n * z * (M - m + 1) * (N - n + 1)
    return ComplexityReport(t1=t1, t2=t2, ratio=t1 / t2)


def surface_to_unit_range(surface: CorrelationSurface) -> np.ndarray:
    """Heatmap encoding: scores mapped by (s+1)/2, invalid cells set to the
    -1 sentinel before the shift (so they land at 0)."""
    s = np.where(surface.valid, surface.scores, -1.0)
    return (s + 1.0) / 2.0
