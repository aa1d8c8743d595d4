"""Gaussian kernels, first/second-order steerable bases, and 2-D filtering.

Kernels are sampled on the integer lattice and truncated at radius
ceil(3*sigma). Smoothing kernels are renormalized to unit tap sum;
derivative kernels are re-centered to zero tap sum and rescaled so their
response on the canonical polynomial is exactly +-1 on the discrete lattice:

* first-order x kernel: response -1 on the ramp I(x, y) = x,
* second-order xx kernel: response +1 on the parabola I(x, y) = x^2 / 2,
* mixed xy kernel: response +1 on the saddle I(x, y) = x*y.

With that calibration the steered combinations reproduce directional
derivatives of quadratics exactly, which makes rotation identities testable.

``convolve2d`` applies the kernel as a sliding inner product *without*
flipping it (filter2D convention), with edge replication at the borders.
That convention fixes the sign of derivative responses: an increasing
x-ramp produces a negative first-order x response.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class Kernel:
    """Odd-sided 2-D tap grid anchored at its center."""

    taps: np.ndarray

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 2 or taps.shape[0] != taps.shape[1] or taps.shape[0] % 2 == 0:
            raise ValueError("kernel taps must form an odd-sided square grid")
        if not np.all(np.isfinite(taps)):
            raise ValueError("kernel taps must be finite")
        object.__setattr__(self, "taps", taps)

    @property
    def radius(self) -> int:
        return self.taps.shape[0] // 2

    @property
    def side(self) -> int:
        return self.taps.shape[0]


@dataclass(frozen=True)
class SteerableBasisG1:
    """First-order Gaussian derivative pair; any orientation is cos/sin mix."""

    sigma: float
    kx: Kernel
    ky: Kernel


@dataclass(frozen=True)
class SteerableBasisG2:
    """Second-order Gaussian derivative triple (xx, yy, xy)."""

    sigma: float
    kxx: Kernel
    kyy: Kernel
    kxy: Kernel


def default_radius(sigma: float) -> int:
    """Truncation radius ceil(3*sigma); leaves <1% of the Gaussian mass out."""
    return int(math.ceil(3.0 * sigma))


def _check_sigma(sigma: float) -> None:
    if not (sigma > 0.0) or not math.isfinite(sigma):
        raise ValueError(f"sigma must be positive and finite, got {sigma}")


def _lattice(radius: int):
    idx = np.arange(-radius, radius + 1, dtype=np.float64)
    xx, yy = np.meshgrid(idx, idx)  # xx varies along columns, yy along rows
    return xx, yy


def gaussian_kernel(sigma: float, radius: int | None = None) -> Kernel:
    """Sampled 2-D Gaussian, renormalized to unit tap sum."""
    _check_sigma(sigma)
    if radius is None:
        radius = default_radius(sigma)
    elif radius < default_radius(sigma):
        raise ValueError(f"radius {radius} < ceil(3*sigma) = {default_radius(sigma)}")
    xx, yy = _lattice(radius)
    g = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma)) / (2.0 * math.pi * sigma * sigma)
    return Kernel(g / g.sum())


def gaussian_kernel_1d(sigma: float, radius: int | None = None) -> np.ndarray:
    """1-D unit-sum Gaussian taps; outer(g, g) equals the 2-D kernel."""
    _check_sigma(sigma)
    if radius is None:
        radius = default_radius(sigma)
    idx = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-idx * idx / (2.0 * sigma * sigma))
    return g / g.sum()


def g1_basis(sigma: float) -> SteerableBasisG1:
    """First-order steerable basis (d/dx and d/dy of the Gaussian)."""
    _check_sigma(sigma)
    radius = default_radius(sigma)
    xx, yy = _lattice(radius)
    env = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
    raw = -xx * env / (2.0 * math.pi * sigma ** 4)
    # unit-magnitude response on the ramp I = x (response is Sum taps*x offsets)
    ramp_response = float((raw * xx).sum())
    kx = raw / (-ramp_response)
    return SteerableBasisG1(sigma=sigma, kx=Kernel(kx), ky=Kernel(kx.T.copy()))


def steer_g1(basis: SteerableBasisG1, theta: float) -> Kernel:
    """Synthesize the first-order kernel oriented at theta radians."""
    return Kernel(math.cos(theta) * basis.kx.taps + math.sin(theta) * basis.ky.taps)


def g2_basis(sigma: float) -> SteerableBasisG2:
    """Second-order steerable basis (xx, yy and mixed xy Gaussian derivatives).

    Each kernel is re-centered to zero tap sum and calibrated to unit
    response on its defining quadratic, so
    cos^2(t)*kxx + sin^2(t)*kyy + 2*sin(t)*cos(t)*kxy is the exact discrete
    second directional derivative on quadratic images.
    """
    _check_sigma(sigma)
    radius = default_radius(sigma)
    xx, yy = _lattice(radius)
    env = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))

    kxx = (xx * xx / (sigma * sigma) - 1.0) * env / (2.0 * math.pi * sigma ** 4)
    kxx = kxx - kxx.mean()
    kxx = kxx / (0.5 * float((kxx * xx * xx).sum()))

    # odd-odd symmetry already gives a zero tap sum; re-centering would break it
    kxy = xx * yy * env / (2.0 * math.pi * sigma ** 6)
    kxy = kxy / float((kxy * xx * yy).sum())

    return SteerableBasisG2(sigma=sigma, kxx=Kernel(kxx), kyy=Kernel(kxx.T.copy()),
                            kxy=Kernel(kxy))


def steer_g2(basis: SteerableBasisG2, theta: float) -> Kernel:
    """Second directional derivative kernel oriented at theta radians."""
    c, s = math.cos(theta), math.sin(theta)
    return Kernel(c * c * basis.kxx.taps + s * s * basis.kyy.taps
                  + 2.0 * s * c * basis.kxy.taps)


def dilated_gaussian(sigma: float, rate: int, radius: int | None = None) -> Kernel:
    """Gaussian taps spread onto a lattice with spacing ``rate`` (atrous form).

    Tap values are those of ``gaussian_kernel(sigma, radius)``, so the sum
    stays 1; zeros fill the holes. rate=1 reproduces the plain kernel.
    """
    if rate < 1 or int(rate) != rate:
        raise ValueError(f"dilation rate must be a positive integer, got {rate}")
    base = gaussian_kernel(sigma, radius).taps
    if rate == 1:
        return Kernel(base)
    r = base.shape[0] // 2
    out = np.zeros((2 * r * rate + 1, 2 * r * rate + 1), dtype=np.float64)
    out[::rate, ::rate] = base
    return Kernel(out)


def convolve2d(image, kernel, border: str = "replicate") -> np.ndarray:
    """Sliding inner product of ``kernel`` over ``image`` (same-size output).

    The kernel is not flipped. Border handling is edge replication; no other
    mode is supported.
    """
    img = np.asarray(getattr(image, "data", image), dtype=np.float64)
    taps = kernel.taps if isinstance(kernel, Kernel) else np.asarray(kernel, dtype=np.float64)
    if border != "replicate":
        raise ValueError(f"unsupported border mode {border!r}")
    if taps.shape[0] > img.shape[0] or taps.shape[1] > img.shape[1]:
        raise ValueError(f"kernel {taps.shape} larger than image {img.shape}")
    return ndimage.correlate(img, taps, mode="nearest")


def correlate_zero_sum(image, kernel) -> np.ndarray:
    """Apply a zero-sum kernel via tapwise differences from the center pixel.

    Computes Sum_d k(d) * (I(p+d) - I(p)), which equals ``convolve2d`` for
    zero-sum kernels but is evaluated so that an exact intensity inversion
    of the input (c - I with every value exactly representable) negates the
    output bit-for-bit. The descriptor relies on that to make rectified
    channels exactly polarity invariant.
    """
    img = np.asarray(getattr(image, "data", image), dtype=np.float64)
    taps = kernel.taps if isinstance(kernel, Kernel) else np.asarray(kernel, dtype=np.float64)
    r = taps.shape[0] // 2
    if taps.shape[0] > img.shape[0] or taps.shape[1] > img.shape[1]:
        raise ValueError(f"kernel {taps.shape} larger than image {img.shape}")
    h, w = img.shape
    pad = np.pad(img, r, mode="edge")
    center = pad[r:r + h, r:r + w]
    out = np.zeros((h, w), dtype=np.float64)
    for dy in range(-r, r + 1):
        rows = pad[r + dy:r + dy + h]
        for dx in range(-r, r + 1):
            weight = taps[dy + r, dx + r]
            if weight == 0.0:
                continue
            out += weight * (rows[:, r + dx:r + dx + w] - center)
    return out


def smooth_dilated(image, sigma: float, rate: int, radius: int | None = None) -> np.ndarray:
    """Dilated Gaussian smoothing, evaluated separably per axis.

    Equivalent to ``convolve2d(image, dilated_gaussian(sigma, rate))`` up to
    floating-point summation order: edge replication clamps each axis
    independently, so the separable passes factorize exactly.
    """
    img = np.asarray(getattr(image, "data", image), dtype=np.float64)
    g = gaussian_kernel_1d(sigma, radius)
    half = len(g) // 2
    out = _correlate1d_dilated(img, g, rate, half, axis=0)
    return _correlate1d_dilated(out, g, rate, half, axis=1)


def _correlate1d_dilated(img: np.ndarray, taps: np.ndarray, rate: int,
                         half: int, axis: int) -> np.ndarray:
    reach = half * rate
    if axis == 0:
        pad = np.pad(img, ((reach, reach), (0, 0)), mode="edge")
    else:
        pad = np.pad(img, ((0, 0), (reach, reach)), mode="edge")
    h, w = img.shape
    out = np.zeros_like(img)
    for k, weight in enumerate(taps):
        off = (k - half) * rate
        if axis == 0:
            out += weight * pad[reach + off:reach + off + h, :]
        else:
            out += weight * pad[:, reach + off:reach + off + w]
    return out
