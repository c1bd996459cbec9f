"""Image quality and temporal stability metrics.

All metrics take images in [0, 1] and honor validity masks: pixels outside
the mask never influence a result.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ContractError
from .flow import FlowParams, estimate_flow, fb_residual, warp_backward
from .image import Image, require_same_shape

PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _joint_mask(a: Image, b: Image, mask: np.ndarray | None) -> np.ndarray:
    require_same_shape(a, b)
    m = a.mask & b.mask
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != m.shape:
            raise ContractError(f"mask shape {mask.shape} does not match image shape {m.shape}")
        m = m & mask
    return m


def psnr(a: Image, b: Image, mask: np.ndarray | None = None, cap: float = PSNR_CAP) -> float:
    """Peak signal-to-noise ratio in dB over jointly valid pixels.

    Identical inputs report ``cap`` instead of infinity.
    """
    m = _joint_mask(a, b, mask)
    if not m.any():
        raise ContractError("psnr: empty mask")
    mse = float(np.mean(np.square(a.data[m] - b.data[m])))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def ssim(a: Image, b: Image, mask: np.ndarray | None = None) -> float:
    """Single-scale SSIM on luma with an 11x11 Gaussian window (sigma 1.5).

    Averaged over pixels whose whole window lies inside the valid region.
    """
    m = _joint_mask(a, b, mask)
    win = 2 * SSIM_RADIUS + 1
    inner = ndimage.binary_erosion(m, structure=np.ones((win, win), bool), border_value=0)
    if not inner.any():
        raise ContractError("ssim: no pixel has a fully valid window")
    x = np.where(m, a.gray(), 0.0)
    y = np.where(m, b.gray(), 0.0)

    def blur(z):
        return ndimage.gaussian_filter(z, SSIM_SIGMA, radius=SSIM_RADIUS, mode="constant")

    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    num = (2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float(np.mean((num / den)[inner]))


@dataclass
class WarpError:
    """Temporal warping error of a sequence.

    ``total`` sums the per-pair mean squared errors (the usual reporting
    convention); ``per_pair_mean`` divides by the number of pairs so that
    sequences of different length compare directly.
    """

    total: float
    per_pair_mean: float
    pair_errors: list[float]
    pair_counts: list[int]
    fb_threshold: float


def pair_warp_error(
    a: Image,
    b: Image,
    flow_params: FlowParams | None = None,
    fb_threshold: float = 1.0,
) -> tuple[float, int]:
    """Mean squared error between ``a`` and ``b`` warped back onto ``a``.

    Pixels whose forward-backward flow residual exceeds ``fb_threshold`` are
    treated as occluded and excluded. Returns (error, pixel count).
    """
    require_same_shape(a, b)
    f_ab = estimate_flow(a, b, flow_params)
    f_ba = estimate_flow(b, a, flow_params)
    warped = warp_backward(b, f_ab)
    keep = warped.mask & a.mask & (fb_residual(f_ab, f_ba) <= fb_threshold)
    count = int(keep.sum())
    if count == 0:
        return 0.0, 0
    return float(np.mean(np.square(a.data[keep] - warped.data[keep]))), count


def warp_error(
    frames: Sequence[Image],
    flow_params: FlowParams | None = None,
    fb_threshold: float = 1.0,
) -> WarpError:
    """Temporal warping error over consecutive frame pairs."""
    if len(frames) < 2:
        raise ContractError("warp_error needs at least 2 frames")
    errors, counts = [], []
    for a, b in zip(frames[:-1], frames[1:]):
        e, n = pair_warp_error(a, b, flow_params, fb_threshold)
        errors.append(e)
        counts.append(n)
    total = float(sum(errors))
    return WarpError(total, total / len(errors), errors, counts, fb_threshold)


@dataclass
class MetricReport:
    psnr: list[float]
    ssim: list[float]
    valid_pixels: list[int]
    e_warp: WarpError | None = None
    columns: tuple[int, int] | None = None
    extra: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    def summary(self) -> dict:
        out = {
            "frames": len(self.psnr),
            "mean_psnr_db": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "columns": list(self.columns) if self.columns else None,
        }
        if self.e_warp is not None:
            out["e_warp_sum"] = self.e_warp.total
            out["e_warp_per_pair_mean"] = self.e_warp.per_pair_mean
            out["e_warp_x1e4_sum"] = self.e_warp.total * 1e4
            out["e_warp_fb_threshold_px"] = self.e_warp.fb_threshold
        out.update(self.extra)
        return out

    def write_csv(self, path: str | Path) -> None:
        pairs = self.e_warp.pair_errors if self.e_warp else []
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "psnr_db", "ssim", "valid_pixels", "warp_error_to_next"])
            for i, (p, s, n) in enumerate(zip(self.psnr, self.ssim, self.valid_pixels)):
                w.writerow([i, f"{p:.6f}", f"{s:.6f}", n, f"{pairs[i]:.9g}" if i < len(pairs) else ""])

    def write_json(self, path: str | Path) -> None:
        doc = self.summary()
        doc["per_frame"] = {"psnr_db": self.psnr, "ssim": self.ssim, "valid_pixels": self.valid_pixels}
        if self.e_warp is not None:
            doc["warp_error"] = asdict(self.e_warp)
        Path(path).write_text(json.dumps(doc, indent=2))


def evaluate_sequence(
    stitched: Sequence[Image],
    reference: Sequence[Image],
    columns: tuple[int, int] | None = None,
    flow_params: FlowParams | None = None,
    fb_threshold: float = 1.0,
    temporal: bool = True,
) -> MetricReport:
    """PSNR/SSIM per frame against ``reference`` plus the stitched E_warp.

    ``columns`` restricts every metric to a half-open column range, e.g. a
    transition region.
    """
    if len(stitched) != len(reference):
        raise ContractError(f"frame count mismatch: {len(stitched)} stitched vs {len(reference)} reference")
    if not stitched:
        raise ContractError("no frames to evaluate")
    if columns is not None:
        stitched = [im.crop_columns(*columns) for im in stitched]
        reference = [im.crop_columns(*columns) for im in reference]
    ps, ss, counts = [], [], []
    for s, r in zip(stitched, reference):
        ps.append(psnr(s, r))
        ss.append(ssim(s, r))
        counts.append(int((s.mask & r.mask).sum()))
    ew = warp_error(stitched, flow_params, fb_threshold) if temporal and len(stitched) > 1 else None
    return MetricReport(ps, ss, counts, ew, columns)
