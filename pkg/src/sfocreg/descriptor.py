"""Dense structural descriptor built from steerable orientation channels.

Per pixel the descriptor stacks rectified first-order gradient channels
(six orientations, summed over three Gaussian scales) on top of rectified
second-order channels (six orientations at one larger scale). Each channel
group is smoothed by three parallel dilated Gaussian kernels (rates 1, 2, 3,
averaged) to pull in neighborhood context without extra taps, then L2
normalized per pixel within its group. Rectification by absolute value makes
the channels invariant to contrast inversion, which is the failure mode of
plain intensity correlation across modalities (e.g. optical vs SAR).

The feature volume is stored as float32, (height, width, z); z is 12 under
defaults, 6 when the second-order group is disabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .filters import correlate_zero_sum, g1_basis, g2_basis, smooth_dilated

VOLUME_MAGIC = b"SFOC 1"


@dataclass(frozen=True)
class SfocParams:
    """Descriptor construction parameters.

    ``sigmas_first`` are the first-order derivative scales, ``sigma_second``
    the second-order scale(s); the ``smooth_sigma_*`` values drive the
    dilated smoothing stage and are deliberately larger for the noisier
    second-order group. ``second_order=False`` selects the degraded
    first-order-only mode (z = orientations).
    """

    orientations: int = 6
    sigmas_first: tuple = (0.6, 0.8, 1.0)
    sigma_second: tuple = (1.5,)
    dilation_rates: tuple = (1, 2, 3)
    smooth_sigma_first: float = 1.0
    smooth_sigma_second: float = 1.5
    epsilon: float = 1e-6
    second_order: bool = True

    def __post_init__(self):
        object.__setattr__(self, "sigmas_first", _as_tuple(self.sigmas_first))
        object.__setattr__(self, "sigma_second", _as_tuple(self.sigma_second))
        object.__setattr__(self, "dilation_rates",
                           tuple(int(r) for r in _as_tuple(self.dilation_rates)))
        if self.orientations < 2:
            raise ValueError("need at least 2 orientations")
        if any(s <= 0 for s in self.sigmas_first + self.sigma_second):
            raise ValueError("all Gaussian scales must be positive")
        if self.smooth_sigma_first <= 0 or self.smooth_sigma_second <= 0:
            raise ValueError("smoothing scales must be positive")
        rates = self.dilation_rates
        if len(rates) == 0 or len(set(rates)) != len(rates) or min(rates) < 1:
            raise ValueError("dilation rates must be distinct positive integers")

    @property
    def thetas(self) -> tuple:
        return tuple(k * math.pi / self.orientations for k in range(self.orientations))

    @property
    def z(self) -> int:
        return self.orientations * (2 if self.second_order else 1)


def _as_tuple(value) -> tuple:
    if isinstance(value, (int, float)):
        return (value,)
    return tuple(value)


@dataclass
class ChannelStack:
    """A bundle of same-sized orientation response planes, (k, H, W)."""

    planes: np.ndarray

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        if self.planes.ndim != 3:
            raise ValueError("channel stack must be (channels, height, width)")

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def height(self) -> int:
        return self.planes.shape[1]


@dataclass(frozen=True)
class FeatureVolume:
    """Per-pixel feature vectors as a read-only (H, W, z) float32 array."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError("feature volume must be (height, width, z)")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def z(self) -> int:
        return self.data.shape[2]


def _image_array(image) -> np.ndarray:
    arr = np.asarray(getattr(image, "data", image), dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D grayscale image")
    return arr


def first_order_channels(image, params: SfocParams) -> ChannelStack:
    """Rectified first-order steerable responses, summed over scales.

    For each orientation theta the plane holds
    Sum_sigma |cos(theta)*Ix_sigma + sin(theta)*Iy_sigma|.
    """
    img = _image_array(image)
    acc = np.zeros((params.orientations,) + img.shape, dtype=np.float64)
    for sigma in params.sigmas_first:
        basis = g1_basis(sigma)
        rx = correlate_zero_sum(img, basis.kx)
        ry = correlate_zero_sum(img, basis.ky)
        for k, theta in enumerate(params.thetas):
            acc[k] += np.abs(math.cos(theta) * rx + math.sin(theta) * ry)
    return ChannelStack(acc)


def second_order_channels(image, params: SfocParams) -> ChannelStack:
    """Rectified second directional derivative responses per orientation."""
    img = _image_array(image)
    acc = np.zeros((params.orientations,) + img.shape, dtype=np.float64)
    for sigma in params.sigma_second:
        basis = g2_basis(sigma)
        rxx = correlate_zero_sum(img, basis.kxx)
        ryy = correlate_zero_sum(img, basis.kyy)
        rxy = correlate_zero_sum(img, basis.kxy)
        for k, theta in enumerate(params.thetas):
            c, s = math.cos(theta), math.sin(theta)
            acc[k] += np.abs(c * c * rxx + s * s * ryy + 2.0 * s * c * rxy)
    return ChannelStack(acc)


def dilated_smooth(stack: ChannelStack, smooth_sigma: float, rates) -> ChannelStack:
    """Average of dilated Gaussian smoothings over the configured rates."""
    rates = tuple(rates)
    out = np.zeros_like(stack.planes)
    for i, plane in enumerate(stack.planes):
        acc = np.zeros_like(plane)
        for rate in rates:
            acc += smooth_dilated(plane, smooth_sigma, rate)
        out[i] = acc / len(rates)
    return ChannelStack(out)


def normalize_group(stack: ChannelStack, epsilon: float = 1e-6) -> ChannelStack:
    """Per-pixel L2 normalization across the stack's channels.

    Pixels whose orientation vector has norm <= epsilon are zeroed instead
    of divided, so featureless regions stay exactly zero (no NaN).
    """
    norms = np.sqrt(np.einsum("khw,khw->hw", stack.planes, stack.planes))
    safe = np.where(norms > epsilon, norms, 1.0)
    out = np.where(norms > epsilon, stack.planes / safe, 0.0)
    return ChannelStack(out)


def build_sfoc(image, params: SfocParams | None = None) -> FeatureVolume:
    """Construct the full feature volume for an image.

    Channel order is fixed: first-order orientations 0..n-1, then (unless
    disabled) second-order orientations n..2n-1, each group dilated-smoothed
    and normalized independently. Serialized volumes are therefore portable.
    """
    if params is None:
        params = SfocParams()
    first = normalize_group(
        dilated_smooth(first_order_channels(image, params),
                       params.smooth_sigma_first, params.dilation_rates),
        params.epsilon)
    groups = [first.planes]
    if params.second_order:
        second = normalize_group(
            dilated_smooth(second_order_channels(image, params),
                           params.smooth_sigma_second, params.dilation_rates),
            params.epsilon)
        groups.append(second.planes)
    stacked = np.concatenate(groups, axis=0)
    return FeatureVolume(np.moveaxis(stacked, 0, -1))


def raw_intensity_volume(image) -> FeatureVolume:
    """The image itself as a 1-channel feature volume (plain-NCC baseline)."""
    img = _image_array(image)
    return FeatureVolume(img[:, :, None])


def save_volume(volume: FeatureVolume, path) -> None:
    """Write the dump format: 'SFOC 1', 'width height z', then z planes of
    little-endian float32, plane-major, each plane row-major."""
    with open(path, "wb") as fh:
        fh.write(VOLUME_MAGIC + b"\n")
        fh.write(f"{volume.width} {volume.height} {volume.z}\n".encode("ascii"))
        planes = np.moveaxis(volume.data, -1, 0)
        fh.write(np.ascontiguousarray(planes, dtype="<f4").tobytes())


def load_volume(path) -> FeatureVolume:
    with open(path, "rb") as fh:
        buf = fh.read()
    if not buf.startswith(VOLUME_MAGIC):
        raise ValueError(f"not a feature volume dump: {path}")
    nl1 = buf.find(b"\n")
    nl2 = buf.find(b"\n", nl1 + 1)
    dims = buf[nl1 + 1:nl2].split()
    if len(dims) != 3:
        raise ValueError("feature volume header needs 'width height z'")
    w, h, z = (int(v) for v in dims)
    need = w * h * z * 4
    payload = buf[nl2 + 1:]
    if len(payload) < need:
        raise ValueError(f"feature volume payload truncated ({len(payload)} < {need})")
    planes = np.frombuffer(payload[:need], dtype="<f4").reshape(z, h, w)
    return FeatureVolume(np.moveaxis(planes, 0, -1))
