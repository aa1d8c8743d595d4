"""Grayscale raster container, pixel/geo coordinate mapping, and file I/O.

Intensities are stored as float64 in [0, 1] regardless of the source bit
depth, so filter scales and matching thresholds are independent of the input
format. Supported file formats:

* PGM P2/P5 with maxval 255 or 65535 (16-bit P5 is big-endian, per Netpbm).
* A simple float raster: ASCII line ``FRAS 1``, ASCII line ``width height``,
  followed by width*height little-endian 32-bit IEEE floats in row-major
  order. Values are clamped to [0, 1] on load. The payload is float32, so
  one save/load pass quantizes to float32 and further passes are lossless.
* ESRI-style world files: six decimal numbers, one per line, in the order
  a, d, b, e, c, f, mapping pixel (x, y) to world (a*x + b*y + c,
  d*x + e*y + f).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_PIXELS = 1 << 30  # refuse absurd header dimensions before allocating


class RasterError(ValueError):
    """Unreadable, malformed, or out-of-contract raster data."""


@dataclass(frozen=True)
class Raster:
    """Immutable 2-D grayscale image with intensities in [0, 1].

    ``data`` is a read-only (height, width) float64 array.
    ``bit_depth_origin`` records the source format ("8", "16" or "float")
    and is metadata only.
    """

    data: np.ndarray
    bit_depth_origin: str = "float"

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise RasterError("raster data must be a non-empty 2-D array")
        if not np.all(np.isfinite(arr)):
            raise RasterError("raster intensities must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise RasterError("raster intensities must lie in [0, 1]")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class GeoRef:
    """Six-parameter affine geo-referencing (world-file convention).

    world_x = a*px + b*py + c ; world_y = d*px + e*py + f.
    The 2x2 block [[a, b], [d, e]] must be invertible.
    """

    a: float
    d: float
    b: float
    e: float
    c: float
    f: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a, self.d, self.b, self.e, self.c, self.f)):
            raise ValueError("world-file parameters must be finite")
        if abs(self._det()) < 1e-15:
            raise ValueError("singular geo-reference (non-invertible pixel block)")

    def _det(self) -> float:
        return self.a * self.e - self.b * self.d

    def pixel_to_geo(self, x, y):
        """Map pixel coordinates to world coordinates."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return self.a * x + self.b * y + self.c, self.d * x + self.e * y + self.f

    def geo_to_pixel(self, gx, gy):
        """Map world coordinates back to (real-valued) pixel coordinates."""
        gx = np.asarray(gx, dtype=np.float64) - self.c
        gy = np.asarray(gy, dtype=np.float64) - self.f
        det = self._det()
        px = (self.e * gx - self.b * gy) / det
        py = (-self.d * gx + self.a * gy) / det
        return px, py

    @property
    def pixel_size(self) -> float:
        """World units covered by one pixel (isotropic measure)."""
        return math.sqrt(abs(self._det()))


@dataclass(frozen=True)
class Patch:
    """A sub-raster plus the pixel offset of its top-left in the parent."""

    raster: Raster
    origin_x: int
    origin_y: int


def bilinear_sample(raster: Raster, x, y):
    """Bilinearly sample the raster at real-valued pixel coordinates.

    Accepts scalars or arrays. Returns ``(values, oob)`` where ``oob`` flags
    coordinates outside [0, width-1] x [0, height-1]; out-of-bounds samples
    are filled with 0. Integer coordinates return the exact pixel value.
    """
    arr = raster.data
    h, w = arr.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    scalar = x.ndim == 0 and y.ndim == 0
    x, y = np.atleast_1d(x), np.atleast_1d(y)
    x, y = np.broadcast_arrays(x, y)

    oob = (x < 0) | (x > w - 1) | (y < 0) | (y > h - 1)
    xc = np.clip(x, 0, w - 1)
    yc = np.clip(y, 0, h - 1)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0

    v = ((1.0 - fx) * (1.0 - fy) * arr[y0, x0]
         + fx * (1.0 - fy) * arr[y0, x1]
         + (1.0 - fx) * fy * arr[y1, x0]
         + fx * fy * arr[y1, x1])
    v = np.where(oob, 0.0, v)
    if scalar:
        return float(v[0]), bool(oob[0])
    return v, oob


def extract_patch(raster: Raster, center_x: int, center_y: int,
                  half_w: int, half_h: int) -> Patch:
    """Cut a (2*half_h+1) x (2*half_w+1) patch centered on a pixel.

    Raises RasterError when any part of the patch would fall outside the
    parent raster; callers typically skip that interest point.
    """
    cx, cy = int(center_x), int(center_y)
    x0, y0 = cx - half_w, cy - half_h
    x1, y1 = cx + half_w, cy + half_h
    if x0 < 0 or y0 < 0 or x1 >= raster.width or y1 >= raster.height:
        raise RasterError(
            f"patch centered at ({cx}, {cy}) with half extent ({half_w}, {half_h}) "
            f"exceeds raster bounds {raster.width}x{raster.height}")
    sub = raster.data[y0:y1 + 1, x0:x1 + 1]
    return Patch(Raster(sub, raster.bit_depth_origin), x0, y0)


def extract_window(raster: Raster, x0: int, y0: int, w: int, h: int) -> Patch:
    """Cut a w x h patch whose top-left corner is (x0, y0)."""
    if x0 < 0 or y0 < 0 or w <= 0 or h <= 0 \
            or x0 + w > raster.width or y0 + h > raster.height:
        raise RasterError(
            f"window ({x0}, {y0}, {w}, {h}) exceeds raster bounds "
            f"{raster.width}x{raster.height}")
    sub = raster.data[y0:y0 + h, x0:x0 + w]
    return Patch(Raster(sub, raster.bit_depth_origin), x0, y0)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def _pgm_header_tokens(buf: bytes, count: int):
    """Yield `count` whitespace-separated header tokens, skipping # comments.

    Returns (tokens, offset_of_first_payload_byte). PGM allows comments
    anywhere in the header; binary payload starts after exactly one
    whitespace byte following the last token.
    """
    tokens = []
    i = 0
    n = len(buf)
    while len(tokens) < count:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < n and not buf[i:i + 1].isspace():
            i += 1
        if start == i:
            raise RasterError("truncated PGM header")
        tokens.append(buf[start:i])
    if i >= n or not buf[i:i + 1].isspace():
        raise RasterError("malformed PGM header (missing delimiter)")
    return tokens, i + 1


def _load_pgm(buf: bytes) -> Raster:
    magic = buf[:2]
    tokens, offset = _pgm_header_tokens(buf[2:], 3)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise RasterError(f"non-numeric PGM header field: {exc}") from exc
    if w <= 0 or h <= 0:
        raise RasterError("PGM dimensions must be positive")
    if w * h > MAX_PIXELS:
        raise RasterError(f"PGM dimensions {w}x{h} exceed supported size")
    if not 1 <= maxval <= 65535:
        raise RasterError(f"PGM maxval {maxval} out of range [1, 65535]")
    payload = buf[2 + offset:]
    if magic == b"P2":
        try:
            values = np.array(payload.split(), dtype=np.float64)
        except ValueError as exc:
            raise RasterError(f"non-numeric P2 sample: {exc}") from exc
        if values.size != w * h:
            raise RasterError(f"P2 sample count {values.size} != {w * h}")
        if values.min() < 0 or values.max() > maxval:
            raise RasterError("P2 sample out of range")
        data = values.reshape(h, w)
    else:  # P5
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = w * h * dtype.itemsize
        if len(payload) < need:
            raise RasterError(f"P5 payload truncated ({len(payload)} < {need} bytes)")
        data = np.frombuffer(payload[:need], dtype=dtype).reshape(h, w).astype(np.float64)
    return Raster(data / maxval, "16" if maxval == 65535 else "8")


def _load_float_raster(buf: bytes) -> Raster:
    nl1 = buf.find(b"\n")
    nl2 = buf.find(b"\n", nl1 + 1)
    if nl1 < 0 or nl2 < 0:
        raise RasterError("truncated float raster header")
    dims = buf[nl1 + 1:nl2].split()
    if len(dims) != 2:
        raise RasterError("float raster header needs 'width height'")
    try:
        w, h = int(dims[0]), int(dims[1])
    except ValueError as exc:
        raise RasterError(f"non-numeric float raster dimension: {exc}") from exc
    if w <= 0 or h <= 0 or w * h > MAX_PIXELS:
        raise RasterError(f"bad float raster dimensions {w}x{h}")
    payload = buf[nl2 + 1:]
    need = w * h * 4
    if len(payload) < need:
        raise RasterError(f"float raster payload truncated ({len(payload)} < {need})")
    data = np.frombuffer(payload[:need], dtype="<f4").reshape(h, w).astype(np.float64)
    if not np.all(np.isfinite(data)):
        raise RasterError("float raster contains non-finite values")
    return Raster(np.clip(data, 0.0, 1.0), "float")


def load_raster(path) -> Raster:
    """Load a PGM (P2/P5) or float raster file, normalized to [0, 1]."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise RasterError(f"cannot read raster {path}: {exc}") from exc
    if buf[:2] in (b"P2", b"P5"):
        return _load_pgm(buf)
    if buf.startswith(b"FRAS 1"):
        return _load_float_raster(buf)
    raise RasterError(f"unrecognized raster format in {path}")


def save_raster(raster: Raster, path, fmt: str = "float") -> None:
    """Write a raster as 'pgm8', 'pgm16', or 'float'.

    PGM output quantizes by rounding to the format's maxval; the float
    format stores float32 and round-trips those values exactly.
    """
    if fmt == "pgm8":
        maxval, dtype = 255, np.dtype("u1")
    elif fmt == "pgm16":
        maxval, dtype = 65535, np.dtype(">u2")
    elif fmt == "float":
        maxval, dtype = None, None
    else:
        raise ValueError(f"unknown raster format {fmt!r}")
    try:
        with open(path, "wb") as fh:
            if fmt == "float":
                fh.write(b"FRAS 1\n")
                fh.write(f"{raster.width} {raster.height}\n".encode("ascii"))
                fh.write(raster.data.astype("<f4").tobytes())
            else:
                fh.write(f"P5\n{raster.width} {raster.height}\n{maxval}\n".encode("ascii"))
                q = np.rint(raster.data * maxval).astype(dtype)
                fh.write(q.tobytes())
    except OSError as exc:
        raise RasterError(f"cannot write raster {path}: {exc}") from exc


def load_world_file(path) -> GeoRef:
    """Read a six-line world file (order a, d, b, e, c, f)."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            values = [float(line.strip()) for line in fh if line.strip()]
    except OSError as exc:
        raise RasterError(f"cannot read world file {path}: {exc}") from exc
    except ValueError as exc:
        raise RasterError(f"malformed world file {path}: {exc}") from exc
    if len(values) != 6:
        raise RasterError(f"world file {path} must hold exactly 6 numbers")
    a, d, b, e, c, f = values
    return GeoRef(a=a, d=d, b=b, e=e, c=c, f=f)


def save_world_file(geo: GeoRef, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for v in (geo.a, geo.d, geo.b, geo.e, geo.c, geo.f):
            fh.write(f"{float(v)!r}\n")
