"""Camera models, rig description and reprojection onto the viewing cylinder.

Conventions
-----------
Camera and rig frames are right-handed with x right, y down and z forward.
A pose stores the camera-to-rig rotation and the camera center in the rig
frame, so a camera-frame direction ``d_cam`` maps to ``R @ d_cam`` in the rig.

Pixel centers sit on integer coordinates; the image rectangle of a
``W x H`` camera is ``[0, W-1] x [0, H-1]``.

Cylinder column ``x`` sees azimuth ``(x / W - 1/2) * horizontal_fov`` and row
``y`` sees height ``(y / H - 1/2) * 2 * vertical_extent`` on a unit-radius
cylinder centered at the rig origin.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ContractError
from .image import Image
from .sampling import bilinear_sample, pixel_grid

logger = logging.getLogger(__name__)

PINHOLE = "pinhole"
FISHEYE = "equidistant-fisheye"
CAMERA_MODELS = (PINHOLE, FISHEYE)
CAMERA_NAMES = ("left", "mid", "right")


@dataclass(frozen=True)
class CameraIntrinsics:
    model: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    fisheye_fov: float | None = None

    def __post_init__(self):
        if self.model not in CAMERA_MODELS:
            raise ContractError(f"unknown camera model {self.model!r}")
        if not (self.fx > 0 and self.fy > 0):
            raise ContractError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ContractError("resolution must be positive")
        if not (0 <= self.cx <= self.width - 1 and 0 <= self.cy <= self.height - 1):
            raise ContractError("principal point must lie inside the image")
        if self.model == FISHEYE:
            fov = self.fisheye_fov
            if fov is None or not (0 < fov < 2 * np.pi):
                raise ContractError("fisheye_fov must be in (0, 2*pi)")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.width, self.height

    @classmethod
    def pinhole_from_fov(cls, width: int, height: int, hfov: float) -> "CameraIntrinsics":
        """Square-pixel pinhole camera whose image edges span ``hfov``."""
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        f = (width / 2.0) / np.tan(hfov / 2.0)
        return cls(PINHOLE, f, f, cx, cy, width, height)


@dataclass(frozen=True)
class CameraPose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ContractError("rotation must be 3x3")
        if t.shape != (3,):
            raise ContractError("translation must be a 3-vector")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ContractError("rotation must be orthonormal with determinant +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)


@dataclass(frozen=True)
class Camera:
    intrinsics: CameraIntrinsics
    pose: CameraPose = field(default_factory=CameraPose)


@dataclass(frozen=True)
class CylinderSpec:
    width: int
    height: int
    horizontal_fov: float
    vertical_extent: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ContractError("cylinder resolution must be positive")
        if not (0 < self.horizontal_fov <= 2 * np.pi):
            raise ContractError("horizontal_fov must be in (0, 2*pi]")
        if self.vertical_extent <= 0:
            raise ContractError("vertical_extent must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def pixels_per_radian(self) -> float:
        return self.width / self.horizontal_fov

    def azimuth(self, x):
        return (np.asarray(x, dtype=np.float64) / self.width - 0.5) * self.horizontal_fov

    def elevation(self, y):
        """Height on the unit cylinder (positive downward)."""
        return (np.asarray(y, dtype=np.float64) / self.height - 0.5) * 2.0 * self.vertical_extent

    def rays(self) -> np.ndarray:
        """(H, W, 3) unit rig-frame viewing directions of every cylinder pixel."""
        theta = self.azimuth(np.arange(self.width))
        h = self.elevation(np.arange(self.height))
        d = np.empty((self.height, self.width, 3))
        d[..., 0] = np.sin(theta)[None, :]
        d[..., 1] = h[:, None]
        d[..., 2] = np.cos(theta)[None, :]
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def project(self, directions: np.ndarray) -> np.ndarray:
        """Map rig-frame directions (..., 3) to fractional cylinder pixels (..., 2)."""
        d = np.asarray(directions, dtype=np.float64)
        rho = np.hypot(d[..., 0], d[..., 2])
        theta = np.arctan2(d[..., 0], d[..., 2])
        with np.errstate(divide="ignore", invalid="ignore"):
            h = d[..., 1] / rho
        x = (theta / self.horizontal_fov + 0.5) * self.width
        y = (h / (2.0 * self.vertical_extent) + 0.5) * self.height
        return np.stack([x, y], axis=-1)


@dataclass(frozen=True)
class CameraRig:
    """Three cameras (left, mid, right) plus the shared output cylinder."""

    cameras: dict
    cylinder: CylinderSpec

    def __post_init__(self):
        missing = [n for n in CAMERA_NAMES if n not in self.cameras]
        if missing:
            raise ContractError(f"rig is missing cameras: {missing}")

    def __getitem__(self, name: str) -> Camera:
        return self.cameras[name]


def yaw_rotation(angle: float) -> np.ndarray:
    """Rotation about the rig's vertical (y) axis; positive angles look right."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def default_rig(
    baseline: float = 0.5,
    side_yaw: float = np.deg2rad(50.0),
    camera_hfov: float = np.deg2rad(100.0),
    camera_resolution: tuple[int, int] = (640, 480),
    cylinder_width: int = 1000,
    cylinder_height: int = 300,
    cylinder_hfov: float = np.pi,
) -> CameraRig:
    """Linear three-camera rig with side cameras yawed outward.

    Adjacent cameras are ``baseline`` meters apart. The cylinder's vertical
    extent is chosen so that its pixels are square.
    """
    intr = CameraIntrinsics.pinhole_from_fov(*camera_resolution, camera_hfov)
    cams = {
        "left": Camera(intr, CameraPose(yaw_rotation(-side_yaw), np.array([-baseline, 0.0, 0.0]))),
        "mid": Camera(intr, CameraPose()),
        "right": Camera(intr, CameraPose(yaw_rotation(side_yaw), np.array([baseline, 0.0, 0.0]))),
    }
    vertical_extent = cylinder_height / 2.0 * cylinder_hfov / cylinder_width
    cyl = CylinderSpec(cylinder_width, cylinder_height, cylinder_hfov, vertical_extent)
    return CameraRig(cams, cyl)


def _in_rectangle(u, v, intr: CameraIntrinsics):
    return (u >= 0) & (u <= intr.width - 1) & (v >= 0) & (v <= intr.height - 1)


def _snap_to_edges(c, hi, tol=1e-9):
    # rounding can push exact border pixels a hair outside the rectangle
    c = np.where((c < 0) & (c > -tol), 0.0, c)
    return np.where((c > hi) & (c < hi + tol), float(hi), c)


def project_directions(d_cam: np.ndarray, intr: CameraIntrinsics):
    """Project camera-frame directions (..., 3) to pixels.

    Returns ``(pixels (..., 2), in_view)`` where ``in_view`` is false for
    directions behind a pinhole camera, outside the fisheye cone or outside
    the image rectangle.
    """
    d = np.asarray(d_cam, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        if intr.model == PINHOLE:
            ahead = z > 0
            u = intr.fx * x / z + intr.cx
            v = intr.fy * y / z + intr.cy
        else:
            rho = np.hypot(x, y)
            theta = np.arctan2(rho, z)
            ahead = theta <= intr.fisheye_fov / 2.0
            scale = np.where(rho > 0, theta / np.where(rho > 0, rho, 1.0), 0.0)
            u = intr.fx * x * scale + intr.cx
            v = intr.fy * y * scale + intr.cy
    ahead = ahead & np.isfinite(u) & np.isfinite(v)
    u = _snap_to_edges(u, intr.width - 1)
    v = _snap_to_edges(v, intr.height - 1)
    pixels = np.stack([u, v], axis=-1)
    return pixels, ahead & _in_rectangle(u, v, intr)


def project(point_cam, intr: CameraIntrinsics) -> np.ndarray:
    """Project a single camera-frame point; raises if it is not visible."""
    pixels, ok = project_directions(np.asarray(point_cam, dtype=np.float64), intr)
    if not np.all(ok):
        raise ContractError("point does not project into the image")
    return pixels


def unproject_pixels(pixels: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Vectorized unprojection without domain checks; returns unit rays (..., 3)."""
    p = np.asarray(pixels, dtype=np.float64)
    mx = (p[..., 0] - intr.cx) / intr.fx
    my = (p[..., 1] - intr.cy) / intr.fy
    if intr.model == PINHOLE:
        d = np.stack([mx, my, np.ones_like(mx)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)
    theta = np.hypot(mx, my)
    sinc = np.where(theta > 0, np.sin(theta) / np.where(theta > 0, theta, 1.0), 1.0)
    return np.stack([mx * sinc, my * sinc, np.cos(theta)], axis=-1)


def unproject(pixel, intr: CameraIntrinsics) -> np.ndarray:
    """Unit viewing ray in the camera frame for a pixel inside the image."""
    p = np.asarray(pixel, dtype=np.float64)
    if p.shape[-1] != 2 or not np.all(_in_rectangle(p[..., 0], p[..., 1], intr)):
        raise ContractError(f"pixel {pixel} outside the {intr.width}x{intr.height} image")
    if intr.model == FISHEYE:
        r = np.hypot((p[..., 0] - intr.cx) / intr.fx, (p[..., 1] - intr.cy) / intr.fy)
        if np.any(r >= np.pi):
            raise ContractError(f"pixel {pixel} is beyond the equidistant model's domain")
    return unproject_pixels(p, intr)


class ReprojectionMap(NamedTuple):
    source_coords: np.ndarray  # (H, W, 2) fractional (u, v) source pixels
    valid: np.ndarray  # (H, W) bool
    source_shape: tuple  # (H_in, W_in)


def build_reprojection_map(intr: CameraIntrinsics, pose: CameraPose, cyl: CylinderSpec) -> ReprojectionMap:
    """Map every cylinder pixel to a source pixel of the given camera.

    Rays leave the rig origin; the camera translation is ignored because the
    scene is taken to be at infinity. Residual misalignment from that
    assumption is parallax, corrected later by the flow-based interpolation.
    """
    rays = cyl.rays()
    d_cam = rays @ pose.rotation  # R^T d for row vectors
    coords, valid = project_directions(d_cam, intr)
    coords = np.where(valid[..., None], coords, np.nan)
    return ReprojectionMap(coords, valid, (intr.height, intr.width))


def identity_map(height: int, width: int) -> ReprojectionMap:
    xx, yy = pixel_grid(height, width)
    return ReprojectionMap(np.stack([xx, yy], axis=-1), np.ones((height, width), dtype=bool), (height, width))


def apply_reprojection(img: Image, rmap: ReprojectionMap) -> Image:
    if img.shape != tuple(rmap.source_shape):
        raise ContractError(f"image {img.shape} does not match map source {tuple(rmap.source_shape)}")
    out, valid = bilinear_sample(img.data, img.mask, rmap.source_coords[..., 0], rmap.source_coords[..., 1])
    valid &= rmap.valid
    out[~valid] = 0.0
    return Image(out, valid)


def leftmost_valid_column(mask: np.ndarray) -> int | None:
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[0]) if cols.size else None


def rightmost_valid_column(mask: np.ndarray) -> int | None:
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[-1]) if cols.size else None


class ExposureMatch(NamedTuple):
    image: Image
    gain: np.ndarray
    ok: bool


def match_exposure(ref: Image, target: Image, overlap_mask: np.ndarray) -> ExposureMatch:
    """Scale ``target`` per channel so its mean over the overlap matches ``ref``.

    With an empty overlap or a zero target mean the target is returned
    unchanged and ``ok`` is False.
    """
    if ref.shape != target.shape:
        raise ContractError("exposure matching needs equal resolutions")
    sel = np.asarray(overlap_mask, dtype=bool) & ref.mask & target.mask
    ones = np.ones(target.channels)
    if not sel.any():
        warnings.warn("exposure matching skipped: empty overlap", RuntimeWarning, stacklevel=2)
        return ExposureMatch(target, ones, False)
    ref_mean = ref.data[sel].mean(axis=0)
    tgt_mean = target.data[sel].mean(axis=0)
    if np.any(tgt_mean <= 0):
        warnings.warn("exposure matching skipped: zero target mean", RuntimeWarning, stacklevel=2)
        return ExposureMatch(target, ones, False)
    gain = ref_mean / tgt_mean
    data = np.clip(target.data * gain, 0.0, 1.0)
    data[~target.mask] = 0.0
    return ExposureMatch(Image(data, target.mask), gain, True)
