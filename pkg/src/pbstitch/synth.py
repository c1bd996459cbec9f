"""Synthetic scenes: ray-cast renderer, analytic flow and ground-truth panoramas.

Scenes hold textured rectangles and axis-aligned boxes that may translate
linearly over time. Every camera is either a regular :class:`Camera`
(pinhole or fisheye) or a :class:`CylinderCamera`, which renders straight
onto the output cylinder from an arbitrary center.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import ContractError, RenderError
from .flow import FlowField
from .geometry import (
    Camera,
    CameraPose,
    CameraRig,
    CylinderSpec,
    ReprojectionMap,
    apply_reprojection,
    build_reprojection_map,
    project_directions,
    unproject_pixels,
)
from .image import Image

TEXTURE_KINDS = ("checker", "stripes", "noise")
_EPS = 1e-9


@dataclass(frozen=True)
class Texture:
    """Procedural texture raster tiled over a surface.

    ``scale`` is the texel size in meters. ``period`` is the checker cell or
    stripe period in texels. Noise is fractal: ``octaves`` layers whose
    correlation length doubles from ``smooth`` texels, each layer weighted by
    ``persistence`` relative to the next coarser one. ``low``/``high`` bound
    the intensity range.
    """

    kind: str = "noise"
    scale: float = 0.05
    seed: int = 0
    size: int = 128
    period: int = 8
    smooth: float = 2.0
    octaves: int = 4
    persistence: float = 0.6
    low: float = 0.15
    high: float = 0.85

    def __post_init__(self):
        if self.kind not in TEXTURE_KINDS:
            raise ContractError(f"unknown texture kind {self.kind!r}")
        if self.scale <= 0 or self.size < 2 or self.period < 1:
            raise ContractError("texture scale, size and period must be positive")


@dataclass(frozen=True)
class Plane:
    """Rectangle of ``size`` (width, height) meters centered at ``center``.

    Columns of ``rotation`` are the rectangle's width axis, height axis and
    normal in the rig frame. The default faces the rig (normal along z).
    """

    center: tuple
    size: tuple
    texture: Texture = field(default_factory=Texture)
    rotation: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    velocity: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box of ``size`` (x, y, z) meters centered at ``center``."""

    center: tuple
    size: tuple
    texture: Texture = field(default_factory=Texture)
    velocity: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple = ()
    background: tuple = (0.5, 0.5, 0.5)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))


@dataclass(frozen=True)
class CylinderCamera:
    """Viewing cylinder placed at ``position`` with rig orientation."""

    cylinder: CylinderSpec
    position: tuple = (0.0, 0.0, 0.0)


class GroundTruthBundle(NamedTuple):
    inputs: tuple  # raw (I_L, I_M, I_R) renders
    panorama: Image
    flows: dict  # side -> (f_side_to_mid on mid grid, f_mid_to_side on side grid)
    occlusions: dict  # side -> (occluded mask on mid grid, occluded mask on side grid)


# --- textures ---------------------------------------------------------------------

@functools.lru_cache(maxsize=256)
def texture_raster(tex: Texture, scene_seed: int = 0, index: int = 0) -> np.ndarray:
    """(size, size, 3) texture raster, deterministic in its seeds."""
    rng = np.random.default_rng([scene_seed, tex.seed, index])
    n = tex.size
    tint = 0.75 + 0.25 * rng.random(3)
    if tex.kind == "noise":
        raw = np.zeros((n, n, 3))
        weight = 1.0
        for octave in range(max(1, tex.octaves)):
            sigma = tex.smooth * 2.0**octave
            layer = ndimage.gaussian_filter(rng.random((n, n, 3)), (sigma, sigma, 0), mode="wrap")
            layer = (layer - layer.mean()) / max(layer.std(), 1e-12)
            raw += weight * layer
            weight /= tex.persistence
        lo = raw.min(axis=(0, 1))
        hi = raw.max(axis=(0, 1))
        base = (raw - lo) / np.where(hi > lo, hi - lo, 1.0)
    else:
        yy, xx = np.mgrid[0:n, 0:n]
        if tex.kind == "checker":
            pattern = ((xx // tex.period + yy // tex.period) % 2).astype(np.float64)
        else:
            pattern = 0.5 + 0.5 * np.sin(2.0 * np.pi * xx / tex.period)
        # soften edges so bilinear filtering stays close to band-limited
        pattern = ndimage.gaussian_filter(pattern, 0.7, mode="wrap")
        base = np.repeat(pattern[..., None], 3, axis=2)
    out = tex.low + (tex.high - tex.low) * base * tint
    return np.clip(out, 0.0, 1.0)


def _sample_texture(raster: np.ndarray, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Bilinear lookup with wrap-around at texel coordinates (s, t)."""
    n = raster.shape[0]
    s0 = np.floor(s)
    t0 = np.floor(t)
    fs = (s - s0)[..., None]
    ft = (t - t0)[..., None]
    i0 = s0.astype(np.int64) % n
    j0 = t0.astype(np.int64) % n
    i1 = (i0 + 1) % n
    j1 = (j0 + 1) % n
    return (
        (1 - fs) * (1 - ft) * raster[j0, i0]
        + fs * (1 - ft) * raster[j0, i1]
        + (1 - fs) * ft * raster[j1, i0]
        + fs * ft * raster[j1, i1]
    )


# --- ray casting --------------------------------------------------------------------

def _position(prim, time: float) -> np.ndarray:
    return np.asarray(prim.center, dtype=np.float64) + time * np.asarray(prim.velocity, dtype=np.float64)


def _intersect_plane(prim: Plane, center, origins, dirs):
    rot = np.asarray(prim.rotation, dtype=np.float64)
    ax_u, ax_v, normal = rot[:, 0], rot[:, 1], rot[:, 2]
    denom = dirs @ normal
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((center - origins) @ normal) / denom
    hit_p = origins + t[..., None] * dirs
    rel = hit_p - center
    u = rel @ ax_u
    v = rel @ ax_v
    w, h = prim.size
    ok = (np.abs(denom) > _EPS) & (t > _EPS) & (np.abs(u) <= w / 2) & (np.abs(v) <= h / 2)
    return np.where(ok, t, np.inf), u + w / 2, v + h / 2


def _intersect_box(prim: Box, center, origins, dirs):
    half = np.asarray(prim.size, dtype=np.float64) / 2
    lo = center - half
    hi = center + half
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origins) * inv
        t2 = (hi - origins) * inv
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    tmax = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
    near_axis = np.argmax(tmin, axis=-1)
    t_near = np.max(tmin, axis=-1)
    t_far = np.min(tmax, axis=-1)
    ok = (t_near <= t_far) & (t_near > _EPS)
    p = origins + np.where(ok, t_near, 0.0)[..., None] * dirs
    rel = p - lo
    # texture axes per face: x-face -> (z, y), y-face -> (x, z), z-face -> (x, y)
    s = np.choose(near_axis, [rel[..., 2], rel[..., 0], rel[..., 0]])
    tt = np.choose(near_axis, [rel[..., 1], rel[..., 2], rel[..., 1]])
    return np.where(ok, t_near, np.inf), s, tt


def _inside_box(prim: Box, center, point) -> bool:
    half = np.asarray(prim.size, dtype=np.float64) / 2
    return bool(np.all(np.abs(np.asarray(point) - center) < half))


def trace(scene: SceneSpec, origins: np.ndarray, dirs: np.ndarray, time: float = 0.0, shade: bool = True):
    """Cast rays; returns (distance along unit dirs, colors or None, hit mask)."""
    shape = dirs.shape[:-1]
    origins = np.broadcast_to(origins, dirs.shape)
    best = np.full(shape, np.inf)
    colors = np.broadcast_to(np.asarray(scene.background, dtype=np.float64), (*shape, 3)).copy() if shade else None
    for idx, prim in enumerate(scene.primitives):
        center = _position(prim, time)
        if isinstance(prim, Plane):
            t, s, tt = _intersect_plane(prim, center, origins, dirs)
        elif isinstance(prim, Box):
            t, s, tt = _intersect_box(prim, center, origins, dirs)
        else:
            raise ContractError(f"unsupported primitive {type(prim).__name__}")
        closer = t < best
        if not closer.any():
            continue
        best = np.where(closer, t, best)
        if shade:
            raster = texture_raster(prim.texture, scene.seed, idx)
            tex = _sample_texture(raster, s[closer] / prim.texture.scale, tt[closer] / prim.texture.scale)
            colors[closer] = tex
    return best, colors, np.isfinite(best)


def _check_camera_outside(scene: SceneSpec, center, time: float):
    for prim in scene.primitives:
        if isinstance(prim, Box) and _inside_box(prim, _position(prim, time), center):
            raise RenderError(f"camera at {tuple(np.round(center, 4))} is inside a box primitive")


def _camera_center(cam) -> np.ndarray:
    if isinstance(cam, CylinderCamera):
        return np.asarray(cam.position, dtype=np.float64)
    return cam.pose.translation


def camera_shape(cam) -> tuple[int, int]:
    if isinstance(cam, CylinderCamera):
        return cam.cylinder.shape
    return cam.intrinsics.height, cam.intrinsics.width


def camera_rays(cam, pixels: np.ndarray) -> np.ndarray:
    """Unit rig-frame directions for fractional pixels (..., 2)."""
    if isinstance(cam, CylinderCamera):
        cyl = cam.cylinder
        theta = cyl.azimuth(pixels[..., 0])
        h = cyl.elevation(pixels[..., 1])
        d = np.stack([np.sin(theta), h, np.cos(theta)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)
    d_cam = unproject_pixels(pixels, cam.intrinsics)
    return d_cam @ cam.pose.rotation.T


def camera_project(cam, directions: np.ndarray):
    """Project rig-frame directions (relative to the camera center) to pixels."""
    if isinstance(cam, CylinderCamera):
        px = cam.cylinder.project(directions)
        h, w = cam.cylinder.shape
        ok = np.isfinite(px).all(axis=-1)
        ok &= (px[..., 0] >= 0) & (px[..., 0] <= w - 1) & (px[..., 1] >= 0) & (px[..., 1] <= h - 1)
        return px, ok
    return project_directions(directions @ cam.pose.rotation, cam.intrinsics)


def _pixel_grid(shape, roi=None):
    h, w = shape
    r0, r1, c0, c1 = roi if roi is not None else (0, h, 0, w)
    yy, xx = np.mgrid[r0:r1, c0:c1].astype(np.float64)
    return np.stack([xx, yy], axis=-1)


def render_view(scene: SceneSpec, cam, time: float = 0.0, supersample: int = 1, roi=None) -> Image:
    """Render the scene from ``cam`` (a Camera or CylinderCamera).

    ``roi=(row0, row1, col0, col1)`` limits rendering to a window; pixels
    outside it are returned invalid. ``supersample`` averages an n x n grid
    of rays per pixel.
    """
    center = _camera_center(cam)
    _check_camera_outside(scene, center, time)
    shape = camera_shape(cam)
    grid = _pixel_grid(shape, roi)
    n = max(1, int(supersample))
    offsets = (np.arange(n) + 0.5) / n - 0.5
    acc = np.zeros((*grid.shape[:2], 3))
    for oy in offsets:
        for ox in offsets:
            px = grid + np.array([ox, oy])
            _, colors, _ = trace(scene, center, camera_rays(cam, px), time)
            acc += colors
    acc /= n * n
    if roi is None:
        return Image(acc)
    r0, r1, c0, c1 = roi
    data = np.zeros((*shape, 3))
    mask = np.zeros(shape, dtype=bool)
    data[r0:r1, c0:c1] = acc
    mask[r0:r1, c0:c1] = True
    return Image(data, mask)


def analytic_flow(scene: SceneSpec, cam_a, cam_b, time: float = 0.0, depth_tol: float = 1e-4):
    """Exact flow on ``cam_a``'s grid with ``a(x) ~ b(x + F(x))`` and occlusions.

    Each pixel's ray from ``cam_a`` is intersected with the scene and the hit
    point projected into ``cam_b``; rays that miss are treated as points at
    infinity. A pixel is occluded when a shadow ray from ``cam_b`` toward the
    point stops short of it by more than ``depth_tol`` (relative).
    Returns ``(FlowField, occluded)``; flow is invalid where the point falls
    outside ``cam_b``'s view.
    """
    shape = camera_shape(cam_a)
    grid = _pixel_grid(shape)
    oa = _camera_center(cam_a)
    ob = _camera_center(cam_b)
    dirs = camera_rays(cam_a, grid)
    dist, _, hit = trace(scene, oa, dirs, time, shade=False)
    points = oa + np.where(hit, dist, 0.0)[..., None] * dirs
    rel = np.where(hit[..., None], points - ob, dirs)
    px, in_view = camera_project(cam_b, rel)

    target_dist = np.where(hit, np.linalg.norm(rel, axis=-1), np.inf)
    with np.errstate(invalid="ignore", divide="ignore"):
        back_dirs = rel / np.linalg.norm(rel, axis=-1, keepdims=True)
    back_dist, _, back_hit = trace(scene, ob, back_dirs, time, shade=False)
    occluded = np.where(hit, back_dist < target_dist * (1.0 - depth_tol) - 1e-9, back_hit)

    disp = np.where(in_view[..., None], px - grid, 0.0)
    return FlowField(disp, in_view), occluded & in_view


# --- ground truth ----------------------------------------------------------------------

def _sub_map(rmap: ReprojectionMap, c0: int, c1: int) -> ReprojectionMap:
    return ReprojectionMap(rmap.source_coords[:, c0:c1], rmap.valid[:, c0:c1], rmap.source_shape)


def _source_roi(rmap: ReprojectionMap, c0: int, c1: int, margin: int = 2):
    sub = _sub_map(rmap, c0, c1)
    pts = sub.source_coords[sub.valid]
    h, w = rmap.source_shape
    if pts.size == 0:
        return None
    u0 = max(0, int(np.floor(pts[:, 0].min())) - margin)
    u1 = min(w, int(np.ceil(pts[:, 0].max())) + margin + 1)
    v0 = max(0, int(np.floor(pts[:, 1].min())) - margin)
    v1 = min(h, int(np.ceil(pts[:, 1].max())) + margin + 1)
    return v0, v1, u0, u1


def render_inputs(scene: SceneSpec, rig: CameraRig, time: float = 0.0, supersample: int = 1) -> tuple:
    return tuple(render_view(scene, rig[name], time, supersample) for name in ("left", "mid", "right"))


def render_ground_truth_panorama(
    scene: SceneSpec,
    rig: CameraRig,
    K: int = 100,
    s: int = 2,
    time: float = 0.0,
    supersample: int = 1,
    transitions: dict | None = None,
    inputs: tuple | None = None,
) -> Image:
    """Pushbroom panorama rendered from K intermediate cameras per side.

    Intermediate camera k of a side sits at fraction ``k/K`` of the way from
    the side camera to the center camera, with the center camera's
    orientation and intrinsics; slice k of the transition is taken from its
    cylinder projection. Outside the transitions the projected side and
    center renders are copied.
    """
    from .pushbroom import StitchConfig, Stitcher, alpha_schedule

    if K < 1:
        raise ContractError("K must be >= 1")
    if transitions is None:
        transitions = Stitcher(rig, StitchConfig(K=K, s=s)).transitions
    cyl = rig.cylinder
    maps = {n: build_reprojection_map(c.intrinsics, c.pose, cyl) for n, c in rig.cameras.items()}
    if inputs is None:
        inputs = render_inputs(scene, rig, time, supersample)
    proj = {n: apply_reprojection(img, maps[n]) for n, img in zip(("left", "mid", "right"), inputs)}

    width = cyl.width
    half = width // 2
    data = np.zeros((cyl.height, width, 3))
    mask = np.zeros(cyl.shape, dtype=bool)
    mid_cam = rig["mid"]

    for side in ("left", "right"):
        t = transitions[side]
        lo, hi = t.columns()
        side_img = proj[side]
        if side == "left":
            outer, inner = slice(0, lo), slice(hi, half)
        else:
            outer, inner = slice(hi, width), slice(half, lo)
        data[:, outer], mask[:, outer] = side_img.data[:, outer], side_img.mask[:, outer]
        data[:, inner], mask[:, inner] = proj["mid"].data[:, inner], proj["mid"].mask[:, inner]

        start = rig[side].pose.translation
        end = mid_cam.pose.translation
        for k, alpha in enumerate(alpha_schedule(t.K), start=1):
            if side == "left":
                c0, c1 = t.boundary + (k - 1) * t.s, t.boundary + k * t.s
            else:
                c0, c1 = t.boundary - k * t.s + 1, t.boundary - (k - 1) * t.s + 1
            cam = Camera(mid_cam.intrinsics, CameraPose(mid_cam.pose.rotation, start + alpha * (end - start)))
            roi = _source_roi(maps["mid"], c0, c1)
            if roi is None:
                continue
            view = render_view(scene, cam, time, supersample, roi=roi)
            part = apply_reprojection(view, _sub_map(maps["mid"], c0, c1))
            data[:, c0:c1] = part.data
            mask[:, c0:c1] = part.mask
    return Image(data, mask)


def cylinder_flows(scene: SceneSpec, rig: CameraRig, time: float = 0.0):
    """Analytic per-side flows and occlusions on the cylinder grid."""
    cyl = rig.cylinder
    mid = CylinderCamera(cyl, tuple(rig["mid"].pose.translation))
    flows, occ = {}, {}
    for side in ("left", "right"):
        cam = CylinderCamera(cyl, tuple(rig[side].pose.translation))
        f_ab, occ_ab = analytic_flow(scene, mid, cam, time)  # warps side onto mid
        f_ba, occ_ba = analytic_flow(scene, cam, mid, time)
        flows[side] = (f_ab, f_ba)
        occ[side] = (occ_ab, occ_ba)
    return flows, occ


def generate_bundle(
    scene: SceneSpec, rig: CameraRig, K: int = 100, s: int = 2, time: float = 0.0, supersample: int = 2
) -> GroundTruthBundle:
    inputs = render_inputs(scene, rig, time, supersample)
    pano = render_ground_truth_panorama(scene, rig, K, s, time, supersample, inputs=inputs)
    flows, occ = cylinder_flows(scene, rig, time)
    return GroundTruthBundle(inputs, pano, flows, occ)


# --- stock scenes ----------------------------------------------------------------------

def two_plane_scene(
    seed: int = 0, near_depth: float = 7.0, far_depth: float = 20.0, detail_scale: float = 0.025
) -> SceneSpec:
    """Far textured wall plus one near board crossing each transition region."""
    far = Plane(
        center=(0.0, 0.0, far_depth), size=(120.0, 40.0),
        texture=Texture("noise", scale=0.12, seed=1, smooth=2.0),
    )
    boards = []
    for i, sign in enumerate((-1.0, 1.0)):
        az = np.deg2rad(32.0) * sign
        boards.append(
            Plane(
                center=(near_depth * np.sin(az), 0.2, near_depth * np.cos(az)),
                size=(1.2, 1.6),
                texture=Texture("noise", scale=detail_scale, seed=2 + i, smooth=2.0, low=0.1, high=0.9),
            )
        )
    return SceneSpec(primitives=(far, *boards), background=(0.4, 0.45, 0.5), seed=seed)


def moving_box_scene(
    seed: int = 0, speed: float = 0.08, depth: float = 7.0, detail_scale: float = 0.025
) -> SceneSpec:
    """Far wall plus a box sliding laterally through the left transition."""
    base = two_plane_scene(seed, near_depth=depth, detail_scale=detail_scale)
    az = np.deg2rad(-30.0)
    box = Box(
        center=(depth * np.sin(az), 0.1, depth * np.cos(az)), size=(1.0, 1.4, 1.0),
        texture=Texture("noise", scale=detail_scale, seed=7, smooth=2.0, low=0.1, high=0.9),
        velocity=(speed, 0.0, 0.0),
    )
    return SceneSpec(primitives=(base.primitives[0], box, base.primitives[2]), background=base.background, seed=seed)
