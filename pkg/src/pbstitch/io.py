"""Persistence: frames, flow files, JSON documents and the dataset layout.

In memory, images are linear-light values in [0, 1]; frame files hold 8-bit
sRGB-encoded values. ``linear=False`` skips the transfer curve and stores
the in-memory values directly as codes.

Flow files use the Middlebury layout: ``b"PIEH"``, int32 width, int32 height,
then row-major interleaved (du, dv) float32, all little-endian. Invalid
vectors are written as 1e10 and anything above 1e9 reads back as invalid.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Literal

import numpy as np
from PIL import Image as PILImage
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import ContractError, DataIOError, FormatError, ParseError
from .flow import FlowField, FlowParams
from .geometry import (
    CAMERA_NAMES,
    Camera,
    CameraIntrinsics,
    CameraPose,
    CameraRig,
    CylinderSpec,
)
from .image import Image
from .pushbroom import StitchConfig
from .synth import Box, GroundTruthBundle, Plane, SceneSpec, Texture

FLOW_MAGIC = b"PIEH"
FLOW_UNKNOWN = 1e10
FLOW_UNKNOWN_THRESHOLD = 1e9
# refuse headers that would describe absurdly large fields
MAX_FLOW_PIXELS = 1 << 28


# --- colour transfer ------------------------------------------------------------

def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


# --- frames --------------------------------------------------------------------

_FRAME_SUFFIXES = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM", ".pnm": "PPM"}


def _frame_format(path: Path) -> str:
    fmt = _FRAME_SUFFIXES.get(path.suffix.lower())
    if fmt is None:
        raise FormatError(f"{path}: unsupported frame extension {path.suffix!r} (use .png or .ppm)")
    return fmt


def write_frame(path: str | Path, img: Image, linear: bool = True) -> None:
    """Write an 8-bit frame. The validity mask goes into the alpha channel.

    PPM has no alpha channel, so writing a partially masked image to PPM is
    refused rather than silently dropping the mask.
    """
    path = Path(path)
    fmt = _frame_format(path)
    if img.channels not in (1, 3):
        raise ContractError(f"can only write 1- or 3-channel frames, got {img.channels}")
    data = linear_to_srgb(img.data) if linear else np.clip(img.data, 0.0, 1.0)
    codes = np.round(data * 255.0).astype(np.uint8)
    if img.channels == 1:
        codes = codes[..., 0]
    full = bool(img.mask.all())
    if fmt == "PPM" and not full:
        raise ContractError(f"{path}: PPM cannot store a validity mask")
    if full:
        pil = PILImage.fromarray(codes, mode="L" if img.channels == 1 else "RGB")
    else:
        alpha = np.where(img.mask, 255, 0).astype(np.uint8)
        pil = PILImage.fromarray(np.dstack([codes, alpha]), mode="LA" if img.channels == 1 else "RGBA")
    try:
        pil.save(path, format=fmt)
    except OSError as exc:
        raise DataIOError(f"{path}: cannot write frame: {exc}") from exc


def read_frame(path: str | Path, linear: bool = True) -> Image:
    """Read a PNG/PPM frame; an alpha channel becomes the validity mask."""
    path = Path(path)
    _frame_format(path)
    try:
        with PILImage.open(path) as pil:
            pil.load()
            mode = pil.mode
            if mode == "P":
                pil = pil.convert("RGBA" if "transparency" in pil.info else "RGB")
                mode = pil.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(pil, dtype=np.float64) / 65535.0
                alpha = None
            elif mode in ("L", "RGB", "LA", "RGBA"):
                arr = np.asarray(pil, dtype=np.float64) / 255.0
                alpha = None
                if mode in ("LA", "RGBA"):
                    alpha = arr[..., -1] >= 0.5
                    arr = arr[..., :-1]
            elif mode == "1":
                arr = np.asarray(pil, dtype=np.float64)
                alpha = None
            else:
                arr = np.asarray(pil.convert("RGB"), dtype=np.float64) / 255.0
                alpha = None
    except FileNotFoundError as exc:
        raise DataIOError(f"{path}: no such file") from exc
    except (OSError, ValueError, SyntaxError, PILImage.DecompressionBombError) as exc:
        raise FormatError(f"{path}: cannot decode frame: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[..., None]
    if linear:
        arr = srgb_to_linear(arr)
    return Image(arr, alpha if alpha is not None else np.ones(arr.shape[:2], bool))


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    """Binary mask as an 8-bit grayscale PNG (255 = set)."""
    m = np.asarray(mask, dtype=bool)
    try:
        PILImage.fromarray(np.where(m, 255, 0).astype(np.uint8), mode="L").save(Path(path), format="PNG")
    except OSError as exc:
        raise DataIOError(f"{path}: cannot write mask: {exc}") from exc


def read_mask(path: str | Path) -> np.ndarray:
    img = read_frame(path, linear=False)
    return img.data[..., 0] >= 0.5


# --- flow files ----------------------------------------------------------------

def encode_flow(f: FlowField) -> bytes:
    h, w = f.shape
    disp = f.displacement.astype("<f4")
    disp[~f.valid] = FLOW_UNKNOWN
    return FLOW_MAGIC + struct.pack("<ii", w, h) + disp.tobytes(order="C")


def decode_flow(buf: bytes) -> FlowField:
    """Parse a Middlebury flow file image. Fails closed on any inconsistency."""
    if len(buf) < 12:
        raise FormatError(f"flow data truncated: {len(buf)} bytes, header needs 12")
    if buf[:4] != FLOW_MAGIC:
        raise FormatError(f"bad flow magic {buf[:4]!r}, expected {FLOW_MAGIC!r}")
    w, h = struct.unpack("<ii", buf[4:12])
    if w <= 0 or h <= 0 or w * h > MAX_FLOW_PIXELS:
        raise FormatError(f"invalid flow dimensions {w}x{h}")
    need = 12 + 8 * w * h
    if len(buf) != need:
        raise FormatError(f"flow data has {len(buf)} bytes, expected {need} for {w}x{h}")
    with np.errstate(invalid="ignore"):
        disp = np.frombuffer(buf, dtype="<f4", offset=12).reshape(h, w, 2).astype(np.float64)
        valid = np.all(np.isfinite(disp) & (np.abs(disp) <= FLOW_UNKNOWN_THRESHOLD), axis=-1)
    disp = np.where(valid[..., None], disp, 0.0)
    return FlowField(disp, valid)


def write_flow(path: str | Path, f: FlowField) -> None:
    try:
        Path(path).write_bytes(encode_flow(f))
    except OSError as exc:
        raise DataIOError(f"{path}: cannot write flow: {exc}") from exc


def read_flow(path: str | Path) -> FlowField:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"{path}: cannot read flow: {exc}") from exc
    try:
        return decode_flow(buf)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# --- JSON documents ------------------------------------------------------------

class _Doc(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)


class CameraDoc(_Doc):
    model: Literal["pinhole", "equidistant-fisheye"] = "pinhole"
    focal: tuple[float, float]
    principal_point: tuple[float, float]
    resolution: tuple[int, int]
    fisheye_fov: float | None = None
    rotation: list[float] = Field(default=[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], min_length=9, max_length=9)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)


class CylinderDoc(_Doc):
    width: int
    height: int
    horizontal_fov: float
    vertical_extent: float


class RigDoc(_Doc):
    cameras: dict[str, CameraDoc]
    cylinder: CylinderDoc


class TextureDoc(_Doc):
    kind: Literal["checker", "stripes", "noise"] = "noise"
    scale: float = 0.05
    seed: int = 0
    size: int = 128
    period: int = 8
    smooth: float = 2.0
    octaves: int = 4
    persistence: float = 0.6
    low: float = 0.15
    high: float = 0.85


class PrimitiveDoc(_Doc):
    type: Literal["plane", "box"]
    center: tuple[float, float, float]
    size: list[float] = Field(min_length=2, max_length=3)
    texture: TextureDoc = TextureDoc()
    rotation: list[float] | None = Field(default=None, min_length=9, max_length=9)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)


class SceneDoc(_Doc):
    primitives: list[PrimitiveDoc] = []
    background: tuple[float, float, float] = (0.5, 0.5, 0.5)
    seed: int = 0


class FlowParamsDoc(_Doc):
    pyramid_levels: int | None = None
    scale_factor: float = FlowParams.scale_factor
    smoothness_alpha: float = FlowParams.smoothness_alpha
    iterations_per_level: int = FlowParams.iterations_per_level
    warps_per_level: int = FlowParams.warps_per_level
    median_filter_radius: int = FlowParams.median_filter_radius
    median_sigma: float = FlowParams.median_sigma
    presmooth_sigma: float = FlowParams.presmooth_sigma
    data_epsilon: float = FlowParams.data_epsilon
    smooth_epsilon: float = FlowParams.smooth_epsilon
    edge_kappa: float = FlowParams.edge_kappa
    reweight_every: int = FlowParams.reweight_every


class StitchConfigDoc(_Doc):
    K: int = StitchConfig.K
    s: int = StitchConfig.s
    refine: str = StitchConfig.refine
    flow: FlowParamsDoc = FlowParamsDoc()
    placement: str = StitchConfig.placement
    shrink_to_fit: bool = StitchConfig.shrink_to_fit
    exposure: bool = StitchConfig.exposure
    flow_region: str = StitchConfig.flow_region
    fb_tau: float = StitchConfig.fb_tau
    photometric_beta: float = StitchConfig.photometric_beta
    refine_median_radius: int = StitchConfig.refine_median_radius
    occlusion_margin: int = StitchConfig.occlusion_margin


def _loc(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _parse_json(text: str | bytes, model: type[_Doc], source: str) -> _Doc:
    try:
        raw = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError, RecursionError) as exc:
        raise ParseError(f"{source}: not valid JSON: {exc}", "<root>") from exc
    try:
        return model.model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ParseError(f"{source}: {err['msg']}", _loc(err["loc"])) from exc
    except RecursionError as exc:
        raise ParseError(f"{source}: document nested too deeply", "<root>") from exc


def _build(path: str, fn, *args, **kwargs):
    """Run a domain constructor, turning its contract errors into parse errors."""
    try:
        return fn(*args, **kwargs)
    except (ContractError, ValueError, TypeError, OverflowError) as exc:
        raise ParseError(str(exc), path) from exc


def _read_text(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"{path}: cannot read: {exc}") from exc


def parse_rig(text: str | bytes, source: str = "rig") -> CameraRig:
    doc = _parse_json(text, RigDoc, source)
    missing = [n for n in CAMERA_NAMES if n not in doc.cameras]
    if missing:
        raise ParseError(f"{source}: missing camera(s) {missing}", "cameras")
    cams = {}
    for name, c in doc.cameras.items():
        where = f"cameras.{name}"
        intr = _build(where, CameraIntrinsics, c.model, c.focal[0], c.focal[1], c.principal_point[0],
                      c.principal_point[1], c.resolution[0], c.resolution[1], c.fisheye_fov)
        rot = np.array(c.rotation, dtype=np.float64).reshape(3, 3)
        pose = _build(f"{where}.rotation", CameraPose, rot, np.array(c.translation, dtype=np.float64))
        cams[name] = Camera(intr, pose)
    cyl = doc.cylinder
    cylinder = _build("cylinder", CylinderSpec, cyl.width, cyl.height, cyl.horizontal_fov, cyl.vertical_extent)
    return _build("<root>", CameraRig, cams, cylinder)


def parse_scene(text: str | bytes, source: str = "scene") -> SceneSpec:
    doc = _parse_json(text, SceneDoc, source)
    prims = []
    for i, p in enumerate(doc.primitives):
        where = f"primitives[{i}]"
        tex = _build(f"{where}.texture", Texture, **p.texture.model_dump())
        if p.type == "plane":
            if len(p.size) != 2:
                raise ParseError("plane size needs 2 numbers (width, height)", f"{where}.size")
            rot = p.rotation or [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
            rows = tuple(tuple(rot[3 * r : 3 * r + 3]) for r in range(3))
            prims.append(_build(where, Plane, p.center, tuple(p.size), tex, rows, p.velocity))
        else:
            if len(p.size) != 3:
                raise ParseError("box size needs 3 numbers", f"{where}.size")
            if p.rotation is not None:
                raise ParseError("boxes are axis-aligned; rotation not allowed", f"{where}.rotation")
            prims.append(_build(where, Box, p.center, tuple(p.size), tex, p.velocity))
    return _build("<root>", SceneSpec, tuple(prims), doc.background, doc.seed)


def parse_config(text: str | bytes, source: str = "config") -> StitchConfig:
    doc = _parse_json(text, StitchConfigDoc, source)
    flow = _build("flow", FlowParams, **doc.flow.model_dump())
    kw = doc.model_dump(exclude={"flow"})
    try:
        return StitchConfig(flow=flow, **kw)
    except (ContractError, ValueError) as exc:
        # point at the offending field when the message names one
        field_name = next((k for k in kw if re.search(rf"\b{k}\b", str(exc))), "<root>")
        raise ParseError(str(exc), field_name) from exc


def load_rig(path: str | Path) -> CameraRig:
    return parse_rig(_read_text(path), str(path))


def load_scene(path: str | Path) -> SceneSpec:
    return parse_scene(_read_text(path), str(path))


def load_config(path: str | Path) -> StitchConfig:
    return parse_config(_read_text(path), str(path))


def rig_to_dict(rig: CameraRig) -> dict:
    cams = {}
    for name, cam in rig.cameras.items():
        i = cam.intrinsics
        cams[name] = {
            "model": i.model,
            "focal": [i.fx, i.fy],
            "principal_point": [i.cx, i.cy],
            "resolution": [i.width, i.height],
            "fisheye_fov": i.fisheye_fov,
            "rotation": [float(x) for x in np.asarray(cam.pose.rotation).ravel()],
            "translation": [float(x) for x in cam.pose.translation],
        }
    c = rig.cylinder
    return {
        "cameras": cams,
        "cylinder": {"width": c.width, "height": c.height, "horizontal_fov": c.horizontal_fov,
                     "vertical_extent": c.vertical_extent},
    }


def scene_to_dict(scene: SceneSpec) -> dict:
    prims = []
    for p in scene.primitives:
        d = {
            "type": "plane" if isinstance(p, Plane) else "box",
            "center": [float(x) for x in p.center],
            "size": [float(x) for x in p.size],
            "texture": asdict(p.texture),
            "velocity": [float(x) for x in p.velocity],
        }
        if isinstance(p, Plane):
            d["rotation"] = [float(x) for row in p.rotation for x in row]
        prims.append(d)
    return {"primitives": prims, "background": [float(x) for x in scene.background], "seed": scene.seed}


def config_to_dict(cfg: StitchConfig) -> dict:
    out = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name != "flow"}
    out["flow"] = asdict(cfg.flow)
    return out


def save_json(path: str | Path, doc: dict) -> None:
    try:
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")
    except OSError as exc:
        raise DataIOError(f"{path}: cannot write: {exc}") from exc


# --- dataset layout ------------------------------------------------------------

STREAMS = ("left", "mid", "right")
_FRAME_RE = re.compile(r"^(\d{6})\.(png|ppm)$")


@dataclass(frozen=True)
class DatasetLayout:
    """Directory layout of a synthetic or captured dataset.

    ``left/ mid/ right/`` hold raw camera frames, ``pano_gt/`` ground-truth
    panoramas, ``flow_gt/`` cylinder-grid flows and ``occ_gt/`` occlusion
    masks. Frames are named by a zero-padded 6-digit index.

    Flow names follow ``{from}2{to}``: ``M2L`` lives on the center grid and
    points into the projected left view, ``L2M`` lives on the left grid and
    points into the center. Occlusion masks share the flow's name and grid.
    """

    root: Path

    SUBDIRS = ("left", "mid", "right", "pano_gt", "flow_gt", "occ_gt")
    FLOW_KINDS = {"left": ("M2L", "L2M"), "right": ("M2R", "R2M")}

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    def create(self) -> "DatasetLayout":
        for d in self.SUBDIRS:
            (self.root / d).mkdir(parents=True, exist_ok=True)
        return self

    @staticmethod
    def frame_name(index: int, ext: str = ".png") -> str:
        if not 0 <= index <= 999999:
            raise ContractError(f"frame index {index} outside 0..999999")
        return f"{index:06d}{ext}"

    def frame_path(self, stream: str, index: int, ext: str = ".png") -> Path:
        return self.root / stream / self.frame_name(index, ext)

    def flow_path(self, index: int, kind: str) -> Path:
        return self.root / "flow_gt" / f"{index:06d}_{kind}.flo"

    def occlusion_path(self, index: int, kind: str) -> Path:
        return self.root / "occ_gt" / f"{index:06d}_{kind}.png"

    def frames(self, stream: str) -> list[Path]:
        """Sorted frame files of one stream; checks the indices are contiguous."""
        d = self.root / stream
        if not d.is_dir():
            raise DataIOError(f"{self.root}: missing stream directory {stream!r}")
        found = {}
        for p in d.iterdir():
            m = _FRAME_RE.match(p.name)
            if m:
                found[int(m.group(1))] = p
        idx = sorted(found)
        if idx != list(range(len(idx))):
            raise DataIOError(f"{d}: frame indices are not contiguous from 000000")
        return [found[i] for i in idx]

    def frame_count(self, streams=STREAMS) -> int:
        counts = {s: len(self.frames(s)) for s in streams}
        if len(set(counts.values())) != 1:
            raise DataIOError(f"{self.root}: streams disagree on frame count: {counts}")
        return next(iter(counts.values()))

    def has_stream(self, stream: str) -> bool:
        return (self.root / stream).is_dir()

    def write_bundle(self, index: int, bundle: GroundTruthBundle) -> None:
        for stream, img in zip(STREAMS, bundle.inputs):
            write_frame(self.frame_path(stream, index), img)
        write_frame(self.frame_path("pano_gt", index), bundle.panorama)
        for side, (f_mid, f_side) in bundle.flows.items():
            k_mid, k_side = self.FLOW_KINDS[side]
            write_flow(self.flow_path(index, k_mid), f_mid)
            write_flow(self.flow_path(index, k_side), f_side)
            occ_mid, occ_side = bundle.occlusions[side]
            write_mask(self.occlusion_path(index, k_mid), occ_mid)
            write_mask(self.occlusion_path(index, k_side), occ_side)

    def read_inputs(self, index: int) -> tuple[Image, Image, Image]:
        out = []
        for stream in STREAMS:
            p = self.frame_path(stream, index)
            if not p.exists():
                alt = p.with_suffix(".ppm")
                if not alt.exists():
                    raise DataIOError(f"missing {stream} frame {p}")
                p = alt
            out.append(read_frame(p))
        return tuple(out)

    def read_flows(self, index: int) -> dict:
        """Ground-truth flows in the form ``Stitcher.stitch(flows=...)`` takes."""
        flows = {}
        for side, (k_mid, k_side) in self.FLOW_KINDS.items():
            flows[side] = (read_flow(self.flow_path(index, k_mid)), read_flow(self.flow_path(index, k_side)))
        return flows


def read_sequence(directory: str | Path) -> list[Image]:
    """All 6-digit-named frames in ``directory``, in index order."""
    layout = DatasetLayout(Path(directory).parent)
    return [read_frame(p) for p in layout.frames(Path(directory).name)]
