import numpy as np
import pytest
from scipy import ndimage

from pbstitch.flow import FlowField
from pbstitch.image import Image


def textured(height, width, seed=0, sigma=1.5, channels=3):
    """Smooth random texture in [0.1, 0.9]; details survive bilinear sampling."""
    rng = np.random.default_rng(seed)
    noise = rng.random((height, width, channels))
    smooth = ndimage.gaussian_filter(noise, (sigma, sigma, 0))
    lo, hi = smooth.min(), smooth.max()
    return Image(0.1 + 0.8 * (smooth - lo) / (hi - lo))


def smooth_flow(height, width, seed=0, amplitude=3.0, sigma=12.0):
    rng = np.random.default_rng(seed)
    d = ndimage.gaussian_filter(rng.normal(size=(height, width, 2)), (sigma, sigma, 0))
    d *= amplitude / max(np.abs(d).max(), 1e-12)
    return FlowField(d)


def shifted(img, dx, dy):
    """b(x) = a(x - (dx, dy)) by bilinear resampling of a larger texture."""
    from pbstitch.sampling import bilinear_sample, pixel_grid

    xx, yy = pixel_grid(*img.shape)
    out, ok = bilinear_sample(img.data, None, xx - dx, yy - dy)
    return Image(out, ok)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def texture_image():
    return textured(96, 128, seed=3)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
