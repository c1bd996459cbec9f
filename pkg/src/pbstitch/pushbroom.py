"""Pushbroom interpolation between a side view and the center view.

For the left half, image ``a`` is the side view and ``b`` the center view,
both already on the cylinder grid. ``f_ab`` warps ``a`` onto ``b``'s geometry
(it lives on ``b``'s grid) and ``f_ba`` warps ``b`` onto ``a`` (it lives on
``a``'s grid). The right half reuses the same code on horizontally mirrored
inputs.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import ContractError, StitchingError
from .flow import (
    FlowField,
    FlowParams,
    estimate_flow,
    fb_consistency,
    scale_flow,
    warp_backward,
    weighted_median,
)
from .geometry import (
    CameraRig,
    apply_reprojection,
    build_reprojection_map,
    leftmost_valid_column,
    match_exposure,
    rightmost_valid_column,
)
from .image import Image, require_same_shape

logger = logging.getLogger(__name__)

REFINE_MODES = ("none", "deterministic")
FLOW_REGIONS = ("overlap", "full")
PLACEMENTS = ("first-valid",)


@dataclass(frozen=True)
class TransitionSpec:
    """One transition region.

    For ``side="left"`` slice ``k`` (1-based) covers columns
    ``[boundary + (k-1)*s, boundary + k*s)``. For ``side="right"`` the
    boundary is the rightmost valid center column and slices run leftward:
    slice ``k`` covers ``(boundary - k*s, boundary - (k-1)*s]``.
    """

    boundary: int
    K: int
    s: int
    side: str = "left"

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ContractError(f"side must be left or right, got {self.side!r}")
        if self.boundary < 0 or self.K < 1 or self.s < 1:
            raise ContractError("transition needs boundary >= 0, K >= 1, s >= 1")

    @property
    def length(self) -> int:
        return self.K * self.s

    def columns(self) -> tuple[int, int]:
        """Half-open column range covered by the transition."""
        if self.side == "left":
            return self.boundary, self.boundary + self.length
        return self.boundary - self.length + 1, self.boundary + 1

    def check(self, width: int) -> None:
        if width % 2:
            raise ContractError("cylinder width must be even")
        lo, hi = self.columns()
        if self.side == "left" and hi > width // 2:
            raise ContractError(f"left transition [{lo}, {hi}) exceeds the left half (W/2={width // 2})")
        if self.side == "right" and (lo < width // 2 or hi > width):
            raise ContractError(f"right transition [{lo}, {hi}) exceeds the right half")

    def mirrored(self, width: int) -> "TransitionSpec":
        side = "left" if self.side == "right" else "right"
        return TransitionSpec(width - 1 - self.boundary, self.K, self.s, side)


@dataclass(frozen=True)
class StitchConfig:
    K: int = 100
    s: int = 2
    refine: str = "deterministic"
    flow: FlowParams = field(default_factory=FlowParams)
    placement: str = "first-valid"
    shrink_to_fit: bool = False
    exposure: bool = True
    flow_region: str = "overlap"
    fb_tau: float = 1.0
    photometric_beta: float = 100.0
    refine_median_radius: int = 1
    occlusion_margin: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ContractError("K must be >= 1")
        if self.s < 1:
            raise ContractError("s must be >= 1")
        if self.refine not in REFINE_MODES:
            raise ContractError(f"refine must be one of {REFINE_MODES}")
        if self.flow_region not in FLOW_REGIONS:
            raise ContractError(f"flow_region must be one of {FLOW_REGIONS}")
        if self.placement not in PLACEMENTS:
            raise ContractError(f"placement must be one of {PLACEMENTS}")
        if self.occlusion_margin < 0 or self.refine_median_radius < 0:
            raise ContractError("occlusion_margin and refine_median_radius must be >= 0")
        if self.fb_tau <= 0 or self.photometric_beta < 0:
            raise ContractError("fb_tau must be positive and photometric_beta non-negative")


def alpha_schedule(K: int) -> list[float]:
    """[1/K, 2/K, ..., 1]."""
    if K < 1:
        raise ContractError("K must be >= 1")
    return [k / K for k in range(1, K + 1)]


def column_alphas(t: TransitionSpec, width: int) -> np.ndarray:
    """Effective flow scale of every column of the left half (side=left).

    0 before the boundary, alpha_k inside slice k, 1 after the transition.
    """
    if t.side != "left":
        raise ContractError("column_alphas works in left-half coordinates; mirror first")
    t.check(width)
    alphas = np.ones(width // 2)
    alphas[: t.boundary] = 0.0
    for k, a in enumerate(alpha_schedule(t.K), start=1):
        alphas[t.boundary + (k - 1) * t.s : t.boundary + k * t.s] = a
    return alphas


def build_column_scaled_flow(f: FlowField, t: TransitionSpec, complement: bool = False) -> FlowField:
    """Single flow field whose columns are scaled by the slice schedule.

    With ``complement=True`` each column uses ``1 - alpha`` instead, which is
    the field used to warp the incoming view toward the side view.
    The result covers the left half only.
    """
    width = f.shape[1]
    if t.side == "right":
        mirrored = build_column_scaled_flow(f.flip_horizontal(), t.mirrored(width), complement)
        return mirrored.flip_horizontal()
    alphas = column_alphas(t, width)
    if complement:
        alphas = 1.0 - alphas
    half = width // 2
    disp = f.displacement[:, :half] * alphas[None, :, None]
    full = np.zeros_like(f.displacement)
    full[:, :half] = disp
    return FlowField(full, f.valid.copy())


# --- refinement and blending --------------------------------------------------

class Refinement(NamedTuple):
    to_a: FlowField  # output grid -> a
    to_b: FlowField  # output grid -> b
    conf_a: np.ndarray  # evidence that the output pixel is visible in a
    conf_b: np.ndarray


def _splat_candidates(flow: FlowField, alphas_full: np.ndarray, toward_b: bool, conf: np.ndarray):
    """Forward-project every source pixel onto the output grid.

    ``toward_b=False``: sources are b pixels with flow to a; the point sits at
    ``y + (1 - alpha) f`` in the output. ``toward_b=True``: sources are a
    pixels with flow to b; the point sits at ``z + alpha g``.
    """
    h, w = flow.shape
    yy, xx = np.nonzero(flow.valid)
    d = flow.displacement[yy, xx]
    width = alphas_full.size

    def alpha_at(qx):
        return alphas_full[np.clip(np.rint(qx), 0, width - 1).astype(np.intp)]

    frac = lambda a: a if toward_b else 1.0 - a  # noqa: E731
    qx = xx.astype(np.float64)
    for _ in range(3):
        qx = xx + frac(alpha_at(qx)) * d[:, 0]
    a = alpha_at(qx)
    qx = xx + frac(a) * d[:, 0]
    qy = yy + frac(a) * d[:, 1]
    tx = np.rint(qx).astype(np.intp)
    ty = np.rint(qy).astype(np.intp)
    inside = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    a = a[inside]
    d = d[inside]
    if toward_b:
        to_a = -a[:, None] * d
        to_b = (1.0 - a)[:, None] * d
        ca = np.ones(a.size)
        cb = conf[yy[inside], xx[inside]]
    else:
        to_a = a[:, None] * d
        to_b = -(1.0 - a)[:, None] * d
        ca = conf[yy[inside], xx[inside]]
        cb = np.ones(a.size)
    priority = np.linalg.norm(d, axis=1)
    return ty[inside] * w + tx[inside], priority, to_a, to_b, ca, cb


def refine_flows(
    f_ab: FlowField, f_ba: FlowField, alphas_full: np.ndarray, cfg: StitchConfig
) -> Refinement:
    """Re-anchor the scaled flows on the output grid.

    Both flow fields are forward-projected to where each scene point lands in
    the interpolated view. Collisions keep the candidate with the largest
    parallax, which along a linear baseline is the nearest surface. Holes are
    filled from the farthest neighbor, then from the plain backward-scaled
    flow. The result is smoothed with a parallax-guided weighted median.
    """
    h, w = f_ab.shape
    conf_b_grid = fb_consistency(f_ab, f_ba, cfg.fb_tau)  # b pixel seen in a
    conf_a_grid = fb_consistency(f_ba, f_ab, cfg.fb_tau)  # a pixel seen in b
    if cfg.occlusion_margin > 0:
        # occlusion borders are only pixel-accurate; widen them so a half-hidden
        # pixel is never blended in at full confidence
        size = 2 * cfg.occlusion_margin + 1
        conf_b_grid = ndimage.minimum_filter(conf_b_grid, size, mode="nearest")
        conf_a_grid = ndimage.minimum_filter(conf_a_grid, size, mode="nearest")
    parts = [
        _splat_candidates(f_ab, alphas_full, False, conf_b_grid),
        _splat_candidates(f_ba, alphas_full, True, conf_a_grid),
    ]
    tgt, pri, to_a, to_b, ca, cb = (np.concatenate(x) for x in zip(*parts))

    order = np.lexsort((pri, tgt))
    tgt, pri = tgt[order], pri[order]
    last = np.r_[tgt[1:] != tgt[:-1], True]
    sel = order[last]
    tgt = tgt[last]

    n = h * w
    filled = np.zeros(n, dtype=bool)
    prio = np.full(n, np.inf)
    fa = np.zeros((n, 2))
    fb = np.zeros((n, 2))
    conf_a = np.zeros(n)
    conf_b = np.zeros(n)
    filled[tgt] = True
    prio[tgt] = pri[last]
    fa[tgt] = to_a[sel]
    fb[tgt] = to_b[sel]
    conf_a[tgt] = ca[sel]
    conf_b[tgt] = cb[sel]

    shape2 = (h, w)
    filled = filled.reshape(shape2)
    prio = prio.reshape(shape2)
    fa = fa.reshape(h, w, 2)
    fb = fb.reshape(h, w, 2)
    conf_a = conf_a.reshape(shape2)
    conf_b = conf_b.reshape(shape2)

    # small splatting gaps: take the farthest (lowest-parallax) filled neighbor
    for _ in range(4):
        holes = ~filled
        if not holes.any():
            break
        best = np.full(shape2, np.inf)
        best_val = [np.zeros_like(fa), np.zeros_like(fb), np.zeros(shape2), np.zeros(shape2)]
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                sp = _shift(prio, dy, dx, np.inf)
                sf = _shift(filled, dy, dx, False)
                take = holes & sf & (sp < best)
                best = np.where(take, sp, best)
                for i, arr in enumerate((fa, fb, conf_a, conf_b)):
                    shifted = _shift(arr, dy, dx, 0.0)
                    mask = take[..., None] if arr.ndim == 3 else take
                    best_val[i] = np.where(mask, shifted, best_val[i])
        newly = np.isfinite(best) & holes
        fa = np.where(newly[..., None], best_val[0], fa)
        fb = np.where(newly[..., None], best_val[1], fb)
        conf_a = np.where(newly, best_val[2], conf_a)
        conf_b = np.where(newly, best_val[3], conf_b)
        prio = np.where(newly, best, prio)
        filled = filled | newly

    if not filled.all():
        # fall back to the plain scaled flows of the column schedule
        a_cols = alphas_full[None, :, None]
        fa = np.where(filled[..., None], fa, a_cols * f_ab.displacement)
        fb = np.where(filled[..., None], fb, (1.0 - a_cols) * f_ba.displacement)
        conf_a = np.where(filled, conf_a, 0.5)
        conf_b = np.where(filled, conf_b, 0.5)
        prio = np.where(filled, prio, np.linalg.norm(f_ab.displacement, axis=-1))

    r = cfg.refine_median_radius
    if r > 0:
        guide = prio
        for arr in (fa, fb):
            for c in range(2):
                arr[..., c] = weighted_median(arr[..., c], guide, r, sigma=1.0)
    return Refinement(FlowField(fa), FlowField(fb), conf_a, conf_b)


def _shift(arr: np.ndarray, dy: int, dx: int, fill):
    """out[y, x] = arr[y + dy, x + dx] with ``fill`` outside."""
    out = np.full_like(arr, fill)
    h, w = arr.shape[:2]
    ys = slice(max(0, -dy), min(h, h - dy))
    xs = slice(max(0, -dx), min(w, w - dx))
    ys2 = slice(max(0, dy), min(h, h + dy))
    xs2 = slice(max(0, dx), min(w, w + dx))
    out[ys, xs] = arr[ys2, xs2]
    return out


def visibility_map(w_a: Image, w_b: Image, conf_a: np.ndarray, conf_b: np.ndarray, beta: float) -> np.ndarray:
    """Weight of ``w_a`` in the blend, in [0, 1].

    Geometric evidence ``conf_a / (conf_a + conf_b)`` decides where the two
    warps disagree; where they agree photometrically (``exp(-beta*|a-b|^2)``
    near 1) the map relaxes toward an even blend.
    """
    total = conf_a + conf_b
    geo = np.where(total > 0, conf_a / np.where(total > 0, total, 1.0), 0.5)
    diff2 = np.sum(np.square(w_a.data - w_b.data), axis=-1)
    agree = np.exp(-beta * diff2)
    v = agree * 0.5 + (1.0 - agree) * geo
    return np.clip(v, 0.0, 1.0)


def blend_visibility(wt_a: Image, wt_b: Image, v) -> Image:
    """v * wt_a + (1 - v) * wt_b, falling back to whichever input is valid."""
    require_same_shape(wt_a, wt_b)
    v = np.broadcast_to(np.asarray(v, dtype=np.float64), wt_a.shape)
    if np.any(v < 0) or np.any(v > 1):
        raise ContractError("visibility must lie in [0, 1]")
    ma, mb = wt_a.mask, wt_b.mask
    v = np.where(ma & ~mb, 1.0, np.where(mb & ~ma, 0.0, v))
    data = v[..., None] * wt_a.data + (1.0 - v[..., None]) * wt_b.data
    valid = ma | mb
    data[~valid] = 0.0
    return Image(data, valid)


def refine_and_visibility(
    fhat_ab: FlowField,
    fhat_ba: FlowField,
    img_a: Image,
    img_b: Image,
    cfg: StitchConfig,
    f_ab: FlowField | None = None,
    f_ba: FlowField | None = None,
    alphas_full: np.ndarray | None = None,
):
    """Refine the scaled flows, warp each image once and compute visibility.

    Returns ``(flow_to_a, flow_to_b, v, warped_a, warped_b)``. With
    ``cfg.refine == "none"`` the scaled flows are used unchanged and
    ``v == 0.5``. The deterministic mode needs the unscaled flows and the
    per-column schedule to re-anchor the flows before the single warp.
    """
    if cfg.refine == "none":
        w_a = warp_backward(img_a, fhat_ab)
        w_b = warp_backward(img_b, fhat_ba)
        return fhat_ab, fhat_ba, np.full(img_a.shape, 0.5), w_a, w_b
    if f_ab is None or f_ba is None or alphas_full is None:
        raise ContractError("deterministic refinement needs the unscaled flows and column schedule")
    ref = refine_flows(f_ab, f_ba, alphas_full, cfg)
    w_a = warp_backward(img_a, ref.to_a)
    w_b = warp_backward(img_b, ref.to_b)
    v = visibility_map(w_a, w_b, ref.conf_a, ref.conf_b, cfg.photometric_beta)
    return ref.to_a, ref.to_b, v, w_a, w_b


# --- half-frame assembly -------------------------------------------------------

def _check_half_inputs(I_a, I_b, f_ab, f_ba, t):
    require_same_shape(I_a, I_b, f_ab, f_ba)
    if t.side != "left":
        raise ContractError("half-frame routines take left-side transitions; mirror the right side")
    t.check(I_a.width)


def _assemble(I_a: Image, I_b: Image, middle: Image, t: TransitionSpec) -> Image:
    half = I_a.width // 2
    lo, hi = t.columns()
    data = np.empty((I_a.height, half, I_a.channels))
    mask = np.empty((I_a.height, half), dtype=bool)
    data[:, :lo] = I_a.data[:, :lo]
    mask[:, :lo] = I_a.mask[:, :lo]
    data[:, lo:hi] = middle.data[:, lo:hi]
    mask[:, lo:hi] = middle.mask[:, lo:hi]
    data[:, hi:] = I_b.data[:, hi:half]
    mask[:, hi:] = I_b.mask[:, hi:half]
    return Image(data, mask)


def _full_alphas(t: TransitionSpec, width: int, value: float | None = None) -> np.ndarray:
    full = np.ones(width)
    if value is None:
        full[: width // 2] = column_alphas(t, width)
    else:
        full[:] = value
    return full


def naive_pushbroom_half(
    I_a: Image, I_b: Image, f_ab: FlowField, f_ba: FlowField, t: TransitionSpec, cfg: StitchConfig | None = None
) -> Image:
    """Direct evaluation: K full-frame warp pairs, one slice kept from each."""
    cfg = cfg or StitchConfig(K=t.K, s=t.s, refine="none")
    _check_half_inputs(I_a, I_b, f_ab, f_ba, t)
    lo, _ = t.columns()
    middle_data = np.zeros(I_a.data.shape)
    middle_mask = np.zeros(I_a.shape, dtype=bool)
    for k, alpha in enumerate(alpha_schedule(t.K), start=1):
        fa = scale_flow(f_ab, alpha)
        fb = scale_flow(f_ba, 1.0 - alpha)
        _, _, v, w_a, w_b = refine_and_visibility(
            fa, fb, I_a, I_b, cfg, f_ab, f_ba, _full_alphas(t, I_a.width, alpha)
        )
        fused = blend_visibility(w_a, w_b, v)
        cols = slice(lo + (k - 1) * t.s, lo + k * t.s)
        middle_data[:, cols] = fused.data[:, cols]
        middle_mask[:, cols] = fused.mask[:, cols]
    return _assemble(I_a, I_b, Image(middle_data, middle_mask), t)


def fast_pushbroom_half(
    I_a: Image, I_b: Image, f_ab: FlowField, f_ba: FlowField, t: TransitionSpec, cfg: StitchConfig | None = None
) -> Image:
    """Single-warp evaluation with column-wise scaled flows."""
    cfg = cfg or StitchConfig(K=t.K, s=t.s, refine="none")
    _check_half_inputs(I_a, I_b, f_ab, f_ba, t)
    fhat_ab = build_column_scaled_flow(f_ab, t)
    fhat_ba = build_column_scaled_flow(f_ba, t, complement=True)
    _, _, v, w_a, w_b = refine_and_visibility(
        fhat_ab, fhat_ba, I_a, I_b, cfg, f_ab, f_ba, _full_alphas(t, I_a.width)
    )
    return _assemble(I_a, I_b, blend_visibility(w_a, w_b, v), t)


# --- full frames -----------------------------------------------------------------

class SidePlan(NamedTuple):
    transition: TransitionSpec
    overlap_columns: tuple[int, int]  # half-open, in unmirrored coordinates


class Stitcher:
    """Precomputes reprojection maps and transition placement for one rig."""

    def __init__(self, rig: CameraRig, cfg: StitchConfig | None = None):
        self.rig = rig
        self.cfg = cfg or StitchConfig()
        cyl = rig.cylinder
        if cyl.width % 2:
            raise ContractError("cylinder width must be even")
        self.maps = {
            name: build_reprojection_map(cam.intrinsics, cam.pose, cyl) for name, cam in rig.cameras.items()
        }
        self.plans = {"left": self._plan("left"), "right": self._plan("right")}

    @property
    def transitions(self) -> dict:
        return {side: plan.transition for side, plan in self.plans.items()}

    def _plan(self, side: str) -> SidePlan:
        cfg = self.cfg
        width = self.rig.cylinder.width
        half = width // 2
        m_mask = self.maps["mid"].valid
        s_mask = self.maps[side].valid
        overlap = m_mask & s_mask
        if not overlap.any():
            raise StitchingError(f"{side} camera does not overlap the center view")
        cols = np.flatnonzero(overlap.any(axis=0))
        overlap_cols = (int(cols[0]), int(cols[-1]) + 1)
        if side == "left":
            b = leftmost_valid_column(m_mask)
            room = min(half, overlap_cols[1]) - b
        else:
            b = rightmost_valid_column(m_mask)
            room = b + 1 - max(half, overlap_cols[0])
        K = cfg.K
        if K * cfg.s > room:
            if not cfg.shrink_to_fit or room < cfg.s:
                raise StitchingError(
                    f"{side} overlap has room for {room} columns, transition needs {K * cfg.s}"
                )
            K = room // cfg.s
            logger.warning("%s transition shrunk to K=%d to fit the overlap", side, K)
        return SidePlan(TransitionSpec(b, K, cfg.s, side), overlap_cols)

    def project(self, I_L: Image, I_M: Image, I_R: Image) -> dict:
        return {
            "left": apply_reprojection(I_L, self.maps["left"]),
            "mid": apply_reprojection(I_M, self.maps["mid"]),
            "right": apply_reprojection(I_R, self.maps["right"]),
        }

    def estimate_side_flows(self, side_img: Image, mid_img: Image, side: str):
        """(f_side_to_mid, f_mid_to_side) on the mid and side grids respectively."""
        fp = self.cfg.flow
        if self.cfg.flow_region == "full":
            return estimate_flow(mid_img, side_img, fp), estimate_flow(side_img, mid_img, fp)
        lo, hi = self.plans[side].overlap_columns
        a = side_img.crop_columns(lo, hi)
        b = mid_img.crop_columns(lo, hi)
        return _embed(estimate_flow(b, a, fp), lo, mid_img.shape), _embed(estimate_flow(a, b, fp), lo, mid_img.shape)

    def stitch(self, I_L: Image, I_M: Image, I_R: Image, flows: dict | None = None, mode: str = "fast") -> Image:
        proj = self.project(I_L, I_M, I_R)
        mid = proj["mid"]
        halves = {}
        for side in ("left", "right"):
            img = proj[side]
            if self.cfg.exposure:
                overlap = img.mask & mid.mask
                img = match_exposure(mid, img, overlap).image
            if flows is not None and side in flows:
                f_ab, f_ba = flows[side]
            else:
                f_ab, f_ba = self.estimate_side_flows(img, mid, side)
            halves[side] = self._half(img, mid, f_ab, f_ba, self.plans[side].transition, mode)
        return _concat_halves(halves["left"], halves["right"])

    def _half(self, img, mid, f_ab, f_ba, t, mode):
        fn = fast_pushbroom_half if mode == "fast" else naive_pushbroom_half
        if mode not in ("fast", "naive"):
            raise ContractError(f"mode must be fast or naive, got {mode!r}")
        cfg = replace(self.cfg, K=t.K)
        if t.side == "left":
            return fn(img, mid, f_ab, f_ba, t, cfg)
        width = mid.width
        out = fn(
            img.flip_horizontal(), mid.flip_horizontal(), f_ab.flip_horizontal(), f_ba.flip_horizontal(),
            t.mirrored(width), cfg,
        )
        return out.flip_horizontal()


def _embed(f: FlowField, col0: int, shape) -> FlowField:
    disp = np.zeros((*shape, 2))
    valid = np.zeros(shape, dtype=bool)
    disp[:, col0 : col0 + f.shape[1]] = f.displacement
    valid[:, col0 : col0 + f.shape[1]] = f.valid
    return FlowField(disp, valid)


def _concat_halves(left: Image, right: Image) -> Image:
    return Image(np.concatenate([left.data, right.data], axis=1), np.concatenate([left.mask, right.mask], axis=1))


def stitch_frame(
    I_L: Image, I_M: Image, I_R: Image, rig: CameraRig, cfg: StitchConfig | None = None,
    flows: dict | None = None, mode: str = "fast",
) -> Image:
    """Stitch one frame triple into a cylindrical panorama.

    ``flows`` may inject per-side flow pairs ``{"left": (f_ab, f_ba), ...}``
    on the cylinder grid in place of estimated ones.
    """
    return Stitcher(rig, cfg).stitch(I_L, I_M, I_R, flows=flows, mode=mode)


def stitch_sequence(frames, rig: CameraRig, cfg: StitchConfig | None = None, flows=None, mode="fast", threads=1):
    """Stitch every triple independently; frame order is preserved.

    ``flows`` is an optional sequence of per-frame flow dicts.
    """
    stitcher = Stitcher(rig, cfg)
    frames = list(frames)

    def run(i):
        try:
            return stitcher.stitch(*frames[i], flows=None if flows is None else flows[i], mode=mode)
        except Exception as exc:
            raise StitchingError(f"frame {i}: {exc}") from exc

    if threads <= 1:
        return [run(i) for i in range(len(frames))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, range(len(frames))))
