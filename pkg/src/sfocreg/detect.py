"""Segment-test corner detection and its block-partitioned variant.

A pixel is a corner when at least ``arc_len`` contiguous pixels on the
16-pixel Bresenham circle of radius 3 are all brighter than center+threshold
or all darker than center-threshold. The corner score is the largest sum of
(|ring - center| - threshold) over any single qualifying arc; a 3x3
non-maximum suppression on that score keeps local peaks only.

The block variant divides the image into ceil(sqrt(K)) x ceil(sqrt(K))
blocks and keeps the strongest corner per block, retrying once at half the
threshold in empty blocks, which trades raw repeatability for the spatially
uniform coverage the downstream transform fit needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Bresenham circle of radius 3, clockwise from 12 o'clock: (dx, dy) pairs.
CIRCLE = ((0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
          (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3))
MARGIN = 3


@dataclass(frozen=True)
class InterestPoint:
    x: int
    y: int
    score: float


def _image_array(image) -> np.ndarray:
    arr = np.asarray(getattr(image, "data", image), dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    return arr


def _segment_masks(img: np.ndarray, threshold: float):
    """Per-ring-pixel bright/dark masks for every interior pixel."""
    h, w = img.shape
    ih, iw = h - 2 * MARGIN, w - 2 * MARGIN
    center = img[MARGIN:h - MARGIN, MARGIN:w - MARGIN]
    ring = np.empty((16, ih, iw), dtype=np.float64)
    for k, (dx, dy) in enumerate(CIRCLE):
        ring[k] = img[MARGIN + dy:MARGIN + dy + ih, MARGIN + dx:MARGIN + dx + iw]
    bright = ring > center + threshold
    dark = ring < center - threshold
    return ring, center, bright, dark


def _has_arc(mask: np.ndarray, arc_len: int) -> np.ndarray:
    """True where some circular run of ``arc_len`` consecutive ring pixels
    is entirely set."""
    doubled = np.concatenate([mask, mask[:arc_len - 1]], axis=0)
    out = np.zeros(mask.shape[1:], dtype=bool)
    for start in range(16):
        run = doubled[start]
        for k in range(1, arc_len):
            run = run & doubled[start + k]
            if not run.any():
                break
        out |= run
    return out


def _arc_score(excess: np.ndarray, mask: np.ndarray, arc_len: int) -> float:
    """Best sum of positive excess over any single qualifying circular arc."""
    best = 0.0
    if mask.all():
        return float(excess.sum())
    # rotate so a gap sits at position 0, then scan linear runs
    gap = int(np.argmin(mask))
    m = np.roll(mask, -gap)
    e = np.roll(excess, -gap)
    run_len, run_sum = 0, 0.0
    for i in range(16):
        if m[i]:
            run_len += 1
            run_sum += e[i]
        else:
            if run_len >= arc_len:
                best = max(best, run_sum)
            run_len, run_sum = 0, 0.0
    if run_len >= arc_len:
        best = max(best, run_sum)
    return best


def fast_score_map(image, threshold: float, arc_len: int = 9) -> np.ndarray:
    """Corner score at every pixel (0 where the segment test fails)."""
    img = _image_array(image)
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if not 1 <= arc_len <= 16:
        raise ValueError("arc length must be within the 16-pixel circle")
    h, w = img.shape
    scores = np.zeros((h, w), dtype=np.float64)
    if h < 2 * MARGIN + 1 or w < 2 * MARGIN + 1:
        return scores
    ring, center, bright, dark = _segment_masks(img, threshold)
    candidates = _has_arc(bright, arc_len) | _has_arc(dark, arc_len)
    ys, xs = np.nonzero(candidates)
    excess_all = np.abs(ring - center) - threshold
    for y, x in zip(ys, xs):
        score = 0.0
        if _has_single(bright[:, y, x], arc_len):
            score = _arc_score(excess_all[:, y, x], bright[:, y, x], arc_len)
        if _has_single(dark[:, y, x], arc_len):
            score = max(score, _arc_score(excess_all[:, y, x], dark[:, y, x], arc_len))
        scores[y + MARGIN, x + MARGIN] = score
    return scores


def _has_single(mask: np.ndarray, arc_len: int) -> bool:
    if mask.all():
        return True
    gap = int(np.argmin(mask))
    m = np.roll(mask, -gap)
    run = 0
    for v in m:
        run = run + 1 if v else 0
        if run >= arc_len:
            return True
    return False


def _nms(scores: np.ndarray) -> np.ndarray:
    """3x3 non-maximum suppression; equal-score plateaus keep the pixel
    earliest in raster order."""
    h, w = scores.shape
    keep = scores > 0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            neighbor = np.full_like(scores, -np.inf)
            ys0, ys1 = max(0, -dy), min(h, h - dy)
            xs0, xs1 = max(0, -dx), min(w, w - dx)
            neighbor[ys0:ys1, xs0:xs1] = scores[ys0 + dy:ys1 + dy, xs0 + dx:xs1 + dx]
            earlier = (dy < 0) or (dy == 0 and dx < 0)
            if earlier:
                keep &= scores > neighbor
            else:
                keep &= scores >= neighbor
    return keep


def fast_corners(image, threshold: float = 0.08, arc_len: int = 9) -> list[InterestPoint]:
    """Detect corners, suppress non-maxima, sort by (score desc, y, x)."""
    img = _image_array(image)
    if img.shape[0] < 7 or img.shape[1] < 7:
        raise ValueError("image must be at least 7x7 for the segment test")
    scores = fast_score_map(img, threshold, arc_len)
    keep = _nms(scores)
    ys, xs = np.nonzero(keep)
    points = [InterestPoint(int(x), int(y), float(scores[y, x])) for y, x in zip(ys, xs)]
    points.sort(key=lambda p: (-p.score, p.y, p.x))
    return points


def block_fast(image, target_count: int, threshold: float = 0.08,
               arc_len: int = 9) -> list[InterestPoint]:
    """At most ``target_count`` corners, at most one per grid block.

    Empty blocks retry the segment test once at threshold/2, then are
    skipped. When more blocks fire than the target allows, the strongest
    points win; output order is by (block row, block col).
    """
    img = _image_array(image)
    if target_count < 1:
        raise ValueError("target_count must be at least 1")
    grid = int(math.ceil(math.sqrt(target_count)))
    base = fast_score_map(img, threshold, arc_len)
    fallback = None

    h, w = img.shape
    row_edges = np.linspace(0, h, grid + 1).astype(int)
    col_edges = np.linspace(0, w, grid + 1).astype(int)
    picks = []  # (block_row, block_col, InterestPoint)
    for br in range(grid):
        for bc in range(grid):
            y0, y1 = row_edges[br], row_edges[br + 1]
            x0, x1 = col_edges[bc], col_edges[bc + 1]
            if y1 <= y0 or x1 <= x0:
                continue
            point = _block_argmax(base, y0, y1, x0, x1)
            if point is None:
                if fallback is None:
                    fallback = fast_score_map(img, threshold / 2.0, arc_len)
                point = _block_argmax(fallback, y0, y1, x0, x1)
            if point is not None:
                picks.append((br, bc, point))

    if len(picks) > target_count:
        ranked = sorted(picks, key=lambda t: (-t[2].score, t[2].y, t[2].x))
        picks = sorted(ranked[:target_count], key=lambda t: (t[0], t[1]))
    return [p for _, _, p in picks]


def _block_argmax(scores: np.ndarray, y0: int, y1: int, x0: int, x1: int):
    block = scores[y0:y1, x0:x1]
    if block.size == 0 or block.max() <= 0:
        return None
    flat = int(np.argmax(block))  # first max in raster order: smallest y, then x
    by, bx = divmod(flat, block.shape[1])
    return InterestPoint(int(x0 + bx), int(y0 + by), float(block[by, bx]))
