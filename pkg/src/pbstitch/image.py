"""Image container: linear-light float raster plus a validity mask."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

# Rec. 709 luma weights; images are linear light.
LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])


@dataclass(frozen=True)
class Image:
    """H x W x C float64 raster in [0, 1] with an H x W boolean mask.

    Invalid pixels hold zeros. Instances are treated as immutable; operations
    return new images.
    """

    data: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[..., None]
        if data.ndim != 3:
            raise ContractError(f"image data must be HxW or HxWxC, got shape {data.shape}")
        mask = self.mask
        if mask is None:
            mask = np.ones(data.shape[:2], dtype=bool)
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != data.shape[:2]:
            raise ContractError(f"mask shape {mask.shape} does not match image {data.shape[:2]}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def gray(self) -> np.ndarray:
        if self.channels == 1:
            return self.data[..., 0]
        if self.channels == 3:
            return self.data @ LUMA_WEIGHTS
        return self.data.mean(axis=2)

    def flip_horizontal(self) -> "Image":
        return Image(self.data[:, ::-1].copy(), self.mask[:, ::-1].copy())

    def crop_columns(self, start: int, stop: int) -> "Image":
        return Image(self.data[:, start:stop].copy(), self.mask[:, start:stop].copy())

    def masked(self) -> "Image":
        """Copy with invalid pixels forced to zero."""
        return Image(np.where(self.mask[..., None], self.data, 0.0), self.mask)


def constant_image(height: int, width: int, value, channels: int = 3) -> Image:
    value = np.broadcast_to(np.asarray(value, dtype=np.float64), (channels,))
    return Image(np.broadcast_to(value, (height, width, channels)).copy())


def require_same_shape(*images) -> None:
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ContractError(f"resolution mismatch: {sorted(shapes)}")
