"""8-bit sRGB <-> CIELAB (D65) conversion and L / ab plane handling."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import BadDimensions, MissingChannels

# linear sRGB -> XYZ, D65
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)
# white taken as the image of RGB(1,1,1) so that grays have a = b = 0
WHITE_D65 = np.ascontiguousarray(SRGB_TO_XYZ.sum(axis=1))


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB image, ``data`` is a (height, width, 3) uint8 array."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] != 3 or d.shape[0] < 1 or d.shape[1] < 1:
            raise BadDimensions(f"expected (H, W, 3) array, got {d.shape}")
        if d.dtype != np.uint8:
            raise BadDimensions(f"expected uint8 data, got {d.dtype}")

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[0]


@dataclass(frozen=True)
class LabImage:
    """Planar Lab image.

    ``l`` is an (H, W) float32 plane in [0, 100]; ``ab`` is a (2, H, W)
    float32 array or None for a decolorized image. ``has_l`` is False when
    the lightness has been dropped (the plane is then all zeros).
    """

    l: np.ndarray
    ab: Optional[np.ndarray] = None
    has_l: bool = field(default=True)

    def __post_init__(self):
        h, w = self.l.shape
        if h < 1 or w < 1:
            raise BadDimensions("empty image")
        if self.ab is not None and self.ab.shape != (2, h, w):
            raise BadDimensions(f"ab planes {self.ab.shape} do not match l {self.l.shape}")

    @property
    def width(self):
        return self.l.shape[1]

    @property
    def height(self):
        return self.l.shape[0]

    @property
    def has_ab(self):
        return self.ab is not None

    def crop(self, top, left, size):
        l = self.l[top:top + size, left:left + size]
        ab = None if self.ab is None else self.ab[:, top:top + size, left:left + size]
        return LabImage(np.ascontiguousarray(l), None if ab is None else np.ascontiguousarray(ab), self.has_l)


def rgb_pixels_to_lab(rgb):
    """(N, 3) uint8 -> (N, 3) float64 Lab."""
    return kernels.srgb_to_lab(np.ascontiguousarray(rgb, dtype=np.uint8), SRGB_TO_XYZ, WHITE_D65)


def lab_pixels_to_rgb(lab):
    """(N, 3) float Lab -> (N, 3) uint8, out-of-gamut values clamped."""
    return kernels.lab_to_srgb(np.ascontiguousarray(lab, dtype=np.float64), XYZ_TO_SRGB, WHITE_D65)


def rgb_to_lab(img: RgbImage) -> LabImage:
    h, w = img.height, img.width
    lab = rgb_pixels_to_lab(img.data.reshape(-1, 3))
    l = lab[:, 0].reshape(h, w).astype(np.float32)
    ab = lab[:, 1:].T.reshape(2, h, w).astype(np.float32)
    return LabImage(l, ab)


def lab_to_rgb(img: LabImage) -> RgbImage:
    if img.ab is None:
        raise MissingChannels("lab_to_rgb needs ab planes")
    h, w = img.height, img.width
    lab = np.empty((h * w, 3), dtype=np.float64)
    lab[:, 0] = img.l.reshape(-1)
    lab[:, 1] = img.ab[0].reshape(-1)
    lab[:, 2] = img.ab[1].reshape(-1)
    return RgbImage(lab_pixels_to_rgb(lab).reshape(h, w, 3))


def drop_channels(img: LabImage, mode: str) -> LabImage:
    """``keep_l`` removes the ab planes, ``keep_ab`` zeroes L and flags it absent."""
    if mode == "keep_l":
        if not img.has_l:
            raise MissingChannels("keep_l on an image without L")
        return LabImage(img.l, None, True)
    if mode == "keep_ab":
        if img.ab is None:
            raise MissingChannels("keep_ab on an image without ab")
        return LabImage(np.zeros_like(img.l), img.ab, False)
    raise ValueError(f"unknown drop mode {mode!r}")


def l_to_gray_rgb(l):
    """Render an L plane as gray RGB (for visualization)."""
    lab = np.zeros((l.size, 3))
    lab[:, 0] = np.clip(l.reshape(-1), 0, 100)
    return lab_pixels_to_rgb(lab).reshape(*l.shape, 3)
