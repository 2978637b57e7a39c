# salprop/imagio.py
"""
Image loading and colour-space preparation.

Purpose:
    - Decode PNG/JPEG files into validated 8-bit RGB images.
    - Convert to CIELab (D65) for the gradient and texture features.
    - Provide the luminance field and binary masks used downstream.
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError
from skimage import color

from .common import DecodeError, SizeMismatch, TooSmall

logger = logging.getLogger(__name__)

MIN_SIDE = 16
SUPPORTED_FORMATS = ("PNG", "JPEG")


@dataclass(frozen=True)
class RgbImage:
    """Row-major 8-bit RGB samples, shape (height, width, 3)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data)
        if data.ndim == 2:
            data = np.repeat(data[:, :, None], 3, axis=2)
        if data.ndim != 3 or data.shape[2] != 3:
            raise DecodeError(f"expected an (H, W, 3) array, got shape {data.shape}")
        if data.shape[0] < MIN_SIDE or data.shape[1] < MIN_SIDE:
            raise TooSmall(
                f"image is {data.shape[1]}x{data.shape[0]}, minimum is {MIN_SIDE}x{MIN_SIDE}"
            )
        data = np.ascontiguousarray(data, dtype=np.uint8)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width


@dataclass(frozen=True)
class LabImage:
    """CIELab channels, each (height, width); L in [0, 100]."""

    L: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @property
    def width(self) -> int:
        return int(self.L.shape[1])

    @property
    def height(self) -> int:
        return int(self.L.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def channels(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.L, self.a, self.b


@dataclass(frozen=True)
class ScalarField:
    """A finite real grid, shape (height, width)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"scalar field must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("scalar field contains NaN or Inf")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    @property
    def height(self) -> int:
        return int(self.values.shape[0])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width


def load_image(path: os.PathLike) -> RgbImage:
    """
    Decode a PNG or JPEG file into an RgbImage.

    Grayscale and palette images are expanded to three channels; an alpha
    channel is dropped.

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    DecodeError
        If the file is corrupt or not a PNG/JPEG.
    TooSmall
        If either side is below 16 pixels.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in SUPPORTED_FORMATS:
                raise DecodeError(f"{path}: unsupported image format {fmt!r}")
            data = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise DecodeError(f"{path}: cannot decode image ({e})") from e
    image = RgbImage(data)
    logger.debug("loaded %s (%dx%d)", path.name, image.width, image.height)
    return image


def rgb_to_lab(img: RgbImage) -> LabImage:
    """
    Convert sRGB to CIELab under the D65 white point.

    Black maps to (0, 0, 0), white to (100, 0, 0); neutral greys stay on the
    a = b = 0 axis.
    """
    lab = color.rgb2lab(img.data.astype(np.float64) / 255.0, illuminant="D65")
    L = np.ascontiguousarray(lab[:, :, 0])
    a = np.ascontiguousarray(lab[:, :, 1])
    b = np.ascontiguousarray(lab[:, :, 2])
    for ch in (L, a, b):
        ch.setflags(write=False)
    return LabImage(L=L, a=a, b=b)


def luminance(lab: LabImage) -> ScalarField:
    """Lightness rescaled to grey levels (0..255), the LTP intensity field."""
    return ScalarField(lab.L * 2.55)


def load_mask(path: os.PathLike, shape: Tuple[int, int]) -> np.ndarray:
    """
    Load a binary ground-truth mask; any non-zero pixel is object.

    Parameters
    ----------
    path : path-like
        PNG/JPEG mask file.
    shape : (height, width)
        Expected size (the paired image).

    Raises
    ------
    SizeMismatch
        If the mask size differs from ``shape``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"mask not found: {path}")
    try:
        with Image.open(path) as im:
            data = np.asarray(im.convert("L"))
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise DecodeError(f"{path}: cannot decode mask ({e})") from e
    if data.shape != tuple(shape):
        raise SizeMismatch(
            f"{path}: mask is {data.shape[1]}x{data.shape[0]}, image is {shape[1]}x{shape[0]}"
        )
    return data > 0
