"""Bilinear sampling shared by reprojection and flow warping."""

from __future__ import annotations

import numpy as np


def bilinear_sample(data: np.ndarray, mask: np.ndarray | None, x: np.ndarray, y: np.ndarray):
    """Sample ``data`` (H, W, C) at fractional pixel coordinates.

    Pixel centers sit on integer coordinates, so a sample is in bounds when
    ``0 <= x <= W - 1`` and ``0 <= y <= H - 1``. A sample is valid when it is in
    bounds and every source pixel with non-zero weight is valid. Invalid
    outputs are zero.

    Integer coordinates reproduce the source values bit-exactly.
    """
    h, w = data.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    finite = np.isfinite(x) & np.isfinite(y)
    inb = finite & (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)

    xs = np.where(inb, x, 0.0)
    ys = np.where(inb, y, 0.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    # keep x0 + 1 in range; the fractional part then reaches exactly 1 on the last column
    x0 = np.minimum(x0, max(w - 2, 0))
    y0 = np.minimum(y0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0

    w00 = (1.0 - fx) * (1.0 - fy)
    w01 = fx * (1.0 - fy)
    w10 = (1.0 - fx) * fy
    w11 = fx * fy

    out = (
        w00[..., None] * data[y0, x0]
        + w01[..., None] * data[y0, x1]
        + w10[..., None] * data[y1, x0]
        + w11[..., None] * data[y1, x1]
    )

    valid = inb
    if mask is not None:
        valid = valid & (mask[y0, x0] | (w00 == 0)) & (mask[y0, x1] | (w01 == 0))
        valid = valid & (mask[y1, x0] | (w10 == 0)) & (mask[y1, x1] | (w11 == 0))
    out[~valid] = 0.0
    return out, valid


def pixel_grid(height: int, width: int):
    """Return (xx, yy) float64 arrays of integer pixel-center coordinates."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    return xx, yy
