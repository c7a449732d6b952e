"""Grayscale image container and PGM/PNG I/O."""
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from app.error_handling import ImageError


@dataclass(frozen=True)
class GrayImage:
    """Row-major intensities in [0, 255]; stored as float64 so gain/bias transforms stay exact."""

    pixels: np.ndarray

    MIN_SIZE: ClassVar[int] = 64

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.float64)
        if pixels.ndim != 2:
            raise ImageError(f"expected a 2-D grayscale array, got shape {pixels.shape}")
        height, width = pixels.shape
        if width < self.MIN_SIZE or height < self.MIN_SIZE:
            raise ImageError(f"image is {width}x{height}, needs at least {self.MIN_SIZE}x{self.MIN_SIZE}")
        if not np.all(np.isfinite(pixels)):
            raise ImageError("image has non-finite intensities")
        if pixels.min() < 0.0 or pixels.max() > 255.0:
            raise ImageError(f"intensities outside [0, 255]: [{pixels.min()}, {pixels.max()}]")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.floor(self.pixels + 0.5), 0, 255).astype(np.uint8)


def resample(img: GrayImage, size: int) -> GrayImage:
    """Bilinear resample to size x size (no-op when already that size)."""
    if img.width == size and img.height == size:
        return img
    factors = (size / img.height, size / img.width)
    pixels = ndimage.zoom(img.pixels, factors, order=1, mode="nearest")
    return GrayImage(np.clip(pixels, 0.0, 255.0))


def load_image(path, frame: Optional[int] = None) -> GrayImage:
    """Reads an 8-bit PGM (P5) or PNG; color PNGs are converted to luminance."""
    try:
        with Image.open(path) as handle:
            pixels = np.asarray(handle.convert("L"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageError(f"cannot read image {path}: {exc}", frame=frame) from exc
    try:
        return GrayImage(pixels)
    except ImageError as exc:
        if frame is None:
            raise
        raise ImageError(f"{path}: {exc}", frame=frame) from exc


def save_pgm(img: GrayImage, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.to_uint8()).save(path, format="PPM")
    return path
