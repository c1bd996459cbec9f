"""Dense optical flow, backward warping and forward-backward consistency.

Flow convention (used everywhere in the package): a flow field ``F`` stored on
the grid of image ``a`` satisfies ``a(x) ~ b(x + F(x))``, so warping ``b`` with
``F`` produces an image aligned with ``a``.
"""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .errors import ContractError
from .image import Image, require_same_shape
from .sampling import bilinear_sample, pixel_grid


@dataclass(frozen=True)
class FlowField:
    displacement: np.ndarray  # (H, W, 2): du, dv in pixels
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        d = np.asarray(self.displacement, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 2:
            raise ContractError(f"flow must be HxWx2, got {d.shape}")
        valid = self.valid
        if valid is None:
            valid = np.ones(d.shape[:2], dtype=bool)
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != d.shape[:2]:
            raise ContractError("flow mask shape mismatch")
        object.__setattr__(self, "displacement", d)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.displacement.shape[:2]

    @property
    def u(self) -> np.ndarray:
        return self.displacement[..., 0]

    @property
    def v(self) -> np.ndarray:
        return self.displacement[..., 1]

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width, 2)))

    @classmethod
    def constant(cls, height: int, width: int, du: float, dv: float) -> "FlowField":
        d = np.empty((height, width, 2))
        d[..., 0] = du
        d[..., 1] = dv
        return cls(d)

    def flip_horizontal(self) -> "FlowField":
        """Flow of the horizontally mirrored image pair."""
        d = self.displacement[:, ::-1].copy()
        d[..., 0] = -d[..., 0]
        return FlowField(d, self.valid[:, ::-1].copy())


@dataclass(frozen=True)
class FlowParams:
    """Coarse-to-fine robust Horn-Schunck settings.

    ``pyramid_levels=None`` picks the level count so the coarsest level is
    about 32 px wide. ``smoothness_alpha``, the epsilons and ``edge_kappa``
    are in intensity units for images in [0, 1]; ``smooth_epsilon`` is in
    pixels of flow difference.
    """

    pyramid_levels: int | None = None
    scale_factor: float = 0.5
    smoothness_alpha: float = 0.04
    iterations_per_level: int = 120
    warps_per_level: int = 3
    median_filter_radius: int = 3
    median_sigma: float = 0.05
    presmooth_sigma: float = 0.5
    data_epsilon: float = 0.01
    smooth_epsilon: float = 0.05
    edge_kappa: float = 0.05
    reweight_every: int = 10

    def __post_init__(self):
        if self.pyramid_levels is not None and self.pyramid_levels < 1:
            raise ContractError("pyramid_levels must be >= 1")
        if not (0 < self.scale_factor < 1):
            raise ContractError("scale_factor must be in (0, 1)")
        if self.iterations_per_level < 1:
            raise ContractError("iterations_per_level must be >= 1")
        if self.warps_per_level < 1:
            raise ContractError("warps_per_level must be >= 1")
        if self.median_filter_radius < 0:
            raise ContractError("median_filter_radius must be >= 0")
        if self.smoothness_alpha <= 0:
            raise ContractError("smoothness_alpha must be positive")
        if min(self.data_epsilon, self.smooth_epsilon, self.edge_kappa, self.median_sigma) <= 0:
            raise ContractError("epsilons, edge_kappa and median_sigma must be positive")
        if self.reweight_every < 1:
            raise ContractError("reweight_every must be >= 1")

    def levels_for(self, width: int, height: int) -> int:
        if self.pyramid_levels is not None:
            return self.pyramid_levels
        size = max(width, height)
        if size <= 32:
            return 1
        return 1 + int(round(math.log(size / 32.0) / math.log(1.0 / self.scale_factor)))


# --- warping -----------------------------------------------------------------

class WarpCounter:
    def __init__(self):
        self.count = 0


_active_counters: list[WarpCounter] = []
_counter_lock = threading.Lock()


@contextlib.contextmanager
def count_warps():
    """Count :func:`warp_backward` calls made inside the block (all threads)."""
    counter = WarpCounter()
    with _counter_lock:
        _active_counters.append(counter)
    try:
        yield counter
    finally:
        with _counter_lock:
            _active_counters.remove(counter)


def warp_backward(img: Image, f: FlowField) -> Image:
    """out(x, y) = img(x + du, y + dv), bilinearly sampled.

    Output pixels are invalid where the flow is invalid, the sample leaves
    the image, or it touches invalid source pixels.
    """
    require_same_shape(img, f)
    if _active_counters:
        with _counter_lock:
            for c in _active_counters:
                c.count += 1
    xx, yy = pixel_grid(*img.shape)
    out, valid = bilinear_sample(img.data, img.mask, xx + f.u, yy + f.v)
    valid &= f.valid
    out[~valid] = 0.0
    return Image(out, valid)


def scale_flow(f: FlowField, alpha: float) -> FlowField:
    if not (0.0 <= alpha <= 1.0):
        raise ContractError(f"flow scale {alpha} outside [0, 1]")
    return FlowField(f.displacement * alpha, f.valid.copy())


def sample_flow(f: FlowField, x: np.ndarray, y: np.ndarray):
    """Bilinearly sample a flow field at fractional positions; returns (disp, valid)."""
    return bilinear_sample(f.displacement, f.valid, x, y)


def fb_residual(f_ab: FlowField, f_ba: FlowField) -> np.ndarray:
    """|f_ab(x) + f_ba(x + f_ab(x))| on f_ab's grid; inf where undefined."""
    if f_ab.shape != f_ba.shape:
        raise ContractError("flow resolution mismatch")
    xx, yy = pixel_grid(*f_ab.shape)
    back, ok = sample_flow(f_ba, xx + f_ab.u, yy + f_ab.v)
    r = np.linalg.norm(f_ab.displacement + back, axis=-1)
    return np.where(ok & f_ab.valid, r, np.inf)


def fb_consistency(f_ab: FlowField, f_ba: FlowField, tau: float = 1.0) -> np.ndarray:
    """Confidence exp(-(r / tau)^2) of the forward-backward round trip, in [0, 1]."""
    if tau <= 0:
        raise ContractError("tau must be positive")
    r = fb_residual(f_ab, f_ba)
    with np.errstate(over="ignore"):
        conf = np.exp(-np.square(r / tau))
    return np.clip(conf, 0.0, 1.0)


# --- estimation ----------------------------------------------------------------

_DERIV = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
# 8-neighborhood offsets (dy, dx) and their base weights
_NEIGHBORS = ((-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
              (-1, -1, 0.5), (-1, 1, 0.5), (1, -1, 0.5), (1, 1, 0.5))


def _gradients(img: np.ndarray):
    gx = ndimage.correlate1d(img, _DERIV, axis=1, mode="nearest")
    gy = ndimage.correlate1d(img, _DERIV, axis=0, mode="nearest")
    return gx, gy


def _downsample(img: np.ndarray, factor: float, shape: tuple[int, int]) -> np.ndarray:
    sigma = math.sqrt(max(1.0 / factor**2 - 1.0, 0.0)) / 2.0
    smoothed = ndimage.gaussian_filter(img, sigma, mode="nearest")
    zoom = (shape[0] / img.shape[0], shape[1] / img.shape[1])
    out = ndimage.zoom(smoothed, zoom, order=1, mode="nearest", grid_mode=True)
    return out[: shape[0], : shape[1]]


def _resize_flow(u: np.ndarray, v: np.ndarray, shape: tuple[int, int]):
    sy, sx = shape[0] / u.shape[0], shape[1] / u.shape[1]
    u2 = ndimage.zoom(u, (sy, sx), order=1, mode="nearest", grid_mode=True)[: shape[0], : shape[1]] * sx
    v2 = ndimage.zoom(v, (sy, sx), order=1, mode="nearest", grid_mode=True)[: shape[0], : shape[1]] * sy
    return u2, v2


def weighted_median(values: np.ndarray, guide: np.ndarray, radius: int, sigma: float) -> np.ndarray:
    """Edge-preserving weighted median of ``values`` over a square window.

    Neighbor weights fall off with intensity difference in ``guide`` so that
    flow does not leak across image edges. ``values`` may carry a trailing
    channel axis; all channels share the same weights.
    """
    if radius <= 0:
        return values.copy()
    multi = values.ndim == 3
    vals_in = values if multi else values[..., None]
    h, w, n = vals_in.shape
    win = 2 * radius + 1
    pad_g = np.pad(guide, radius, mode="edge")
    diffs = sliding_window_view(pad_g, (win, win)).reshape(h, w, win * win) - guide[..., None]
    weights = np.exp(-np.square(diffs) / (2.0 * sigma**2))
    out = np.empty_like(vals_in, dtype=np.float64)
    for c in range(n):
        pad_v = np.pad(vals_in[..., c], radius, mode="edge")
        vals = sliding_window_view(pad_v, (win, win)).reshape(h, w, win * win)
        order = np.argsort(vals, axis=-1, kind="stable")
        cum = np.cumsum(np.take_along_axis(weights, order, axis=-1), axis=-1)
        idx = np.argmax(cum >= 0.5 * cum[..., -1:], axis=-1)
        out[..., c] = np.take_along_axis(vals, np.take_along_axis(order, idx[..., None], axis=-1), axis=-1)[..., 0]
    return out if multi else out[..., 0]


def _neighbors(a: np.ndarray) -> list[np.ndarray]:
    h, w = a.shape
    pad = np.pad(a, 1, mode="edge")
    return [pad[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w] for dy, dx, _ in _NEIGHBORS]


def _charbonnier_weight(sq: np.ndarray, eps: float) -> np.ndarray:
    # IRLS weight of sqrt(r^2 + eps^2), scaled to 1 for small residuals
    return eps / np.sqrt(sq + eps * eps)


def _solve_level(i1, i2, valid1, valid2, u, v, p: FlowParams):
    """Robust color Horn-Schunck on one pyramid level.

    Data and smoothness terms are Charbonnier penalties solved by IRLS; the
    smoothness weights are additionally damped across intensity edges of
    ``i1`` so that flow discontinuities can follow object boundaries.
    """
    h, w, nc = i1.shape
    xx, yy = pixel_grid(h, w)
    alpha2 = p.smoothness_alpha**2
    per_warp = max(1, p.iterations_per_level // p.warps_per_level)
    grads1 = [_gradients(i1[..., c]) for c in range(nc)]
    stack = np.concatenate([i2] + [np.stack(_gradients(i2[..., c]), axis=-1) for c in range(nc)], axis=-1)
    guide = i1.mean(axis=-1)
    edge = [wt * np.exp(-np.abs(n - guide) / p.edge_kappa) for n, (_, _, wt) in zip(_neighbors(guide), _NEIGHBORS)]

    for _ in range(p.warps_per_level):
        sampled, ok = bilinear_sample(stack, valid2, xx + u, yy + v)
        keep = (ok & valid1)[..., None]
        ix = np.where(keep, 0.5 * (sampled[..., nc::2] + np.stack([g[0] for g in grads1], -1)), 0.0)
        iy = np.where(keep, 0.5 * (sampled[..., nc + 1 :: 2] + np.stack([g[1] for g in grads1], -1)), 0.0)
        it = np.where(keep, sampled[..., :nc] - i1, 0.0)
        u0, v0 = u.copy(), v.copy()
        # data term linearized around (u0, v0): ix*(u-u0) + iy*(v-v0) + it
        c0 = it - ix * u0[..., None] - iy * v0[..., None]
        for k in range(per_warp):
            if k % p.reweight_every == 0:
                r = ix * (u - u0)[..., None] + iy * (v - v0)[..., None] + it
                psi = _charbonnier_weight(r * r, p.data_epsilon)
                jxx = (psi * ix * ix).sum(-1)
                jxy = (psi * ix * iy).sum(-1)
                jyy = (psi * iy * iy).sum(-1)
                bx = (psi * ix * c0).sum(-1)
                by = (psi * iy * c0).sum(-1)
                wts = [
                    e * _charbonnier_weight(np.square(nu - u) + np.square(nv - v), p.smooth_epsilon)
                    for e, nu, nv in zip(edge, _neighbors(u), _neighbors(v))
                ]
                wsum = sum(wts)
                a = alpha2 * wsum
                a11, a22 = jxx + a, jyy + a
                det = a11 * a22 - jxy * jxy
            ub = sum(wt * n for wt, n in zip(wts, _neighbors(u))) / wsum
            vb = sum(wt * n for wt, n in zip(wts, _neighbors(v))) / wsum
            r1 = a * ub - bx
            r2 = a * vb - by
            u = (a22 * r1 - jxy * r2) / det
            v = (a11 * r2 - jxy * r1) / det
        if p.median_filter_radius > 0:
            uv = weighted_median(np.stack([u, v], axis=-1), guide, p.median_filter_radius, p.median_sigma)
            u, v = uv[..., 0], uv[..., 1]
    return u, v


def estimate_flow(a: Image, b: Image, p: FlowParams | None = None) -> FlowField:
    """Flow on ``a``'s grid such that ``a(x) ~ b(x + F(x))``.

    Coarse-to-fine robust Horn-Schunck on all color channels, with image
    warping at every level and a weighted median filter after each warp.
    Deterministic for fixed inputs.
    """
    p = p or FlowParams()
    require_same_shape(a, b)
    h, w = a.shape
    c1 = np.where(a.mask[..., None], a.data, 0.0)
    c2 = np.where(b.mask[..., None], b.data, 0.0)
    if p.presmooth_sigma > 0:
        sig = (p.presmooth_sigma, p.presmooth_sigma, 0.0)
        c1 = ndimage.gaussian_filter(c1, sig, mode="nearest")
        c2 = ndimage.gaussian_filter(c2, sig, mode="nearest")

    def down(img, shape):
        return np.stack([_downsample(img[..., c], p.scale_factor, shape) for c in range(img.shape[2])], axis=-1)

    levels = p.levels_for(w, h)
    pyr = [(c1, c2, a.mask, b.mask)]
    for _ in range(1, levels):
        l1, l2, m1, m2 = pyr[-1]
        shape = (max(2, int(round(l1.shape[0] * p.scale_factor))), max(2, int(round(l1.shape[1] * p.scale_factor))))
        if shape == l1.shape[:2]:
            break
        m1f = _downsample(m1.astype(np.float64), p.scale_factor, shape) > 0.99
        m2f = _downsample(m2.astype(np.float64), p.scale_factor, shape) > 0.99
        pyr.append((down(l1, shape), down(l2, shape), m1f, m2f))

    u = np.zeros(pyr[-1][0].shape[:2])
    v = np.zeros_like(u)
    for i1, i2, m1, m2 in reversed(pyr):
        if u.shape != i1.shape[:2]:
            u, v = _resize_flow(u, v, i1.shape[:2])
        u, v = _solve_level(i1, i2, m1, m2, u, v, p)

    limit = float(max(h, w))
    disp = np.clip(np.stack([u, v], axis=-1), -limit, limit)
    return FlowField(disp, a.mask.copy())
