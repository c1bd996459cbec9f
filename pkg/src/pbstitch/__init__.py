"""Pushbroom stitching of three-camera rigs onto a viewing cylinder."""

from .errors import ContractError, DataIOError, FormatError, ParseError, PbStitchError, RenderError, StitchingError
from .flow import FlowField, FlowParams, count_warps, estimate_flow, warp_backward
from .geometry import CameraIntrinsics, CameraPose, CameraRig, CylinderSpec, default_rig
from .image import Image
from .pushbroom import (
    StitchConfig,
    Stitcher,
    TransitionSpec,
    fast_pushbroom_half,
    naive_pushbroom_half,
    stitch_frame,
    stitch_sequence,
)

__all__ = [
    "CameraIntrinsics",
    "CameraPose",
    "CameraRig",
    "ContractError",
    "CylinderSpec",
    "DataIOError",
    "FlowField",
    "FlowParams",
    "FormatError",
    "Image",
    "ParseError",
    "PbStitchError",
    "RenderError",
    "StitchConfig",
    "Stitcher",
    "StitchingError",
    "TransitionSpec",
    "count_warps",
    "default_rig",
    "estimate_flow",
    "fast_pushbroom_half",
    "naive_pushbroom_half",
    "stitch_frame",
    "stitch_sequence",
    "warp_backward",
]

__version__ = "0.1.0"
