import numpy as np
import pytest

from sfocreg.raster import Raster


@pytest.fixture
def band_limited_image():
    """Smooth synthetic image with wavelengths well above the kernel scales."""
    n = 128
    x, y = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float))
    img = (0.5
           + 0.18 * np.sin(2 * np.pi * x / 23.0 + 0.7) * np.cos(2 * np.pi * y / 29.0)
           + 0.12 * np.cos(2 * np.pi * (x + y) / 41.0)
           + 0.08 * np.sin(2 * np.pi * (x - 2 * y) / 37.0))
    return img


def make_raster(arr) -> Raster:
    return Raster(np.asarray(arr, dtype=np.float64))
