"""Reading and writing 8-bit RGB images (PNG and binary PPM)."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError

_EXTENSIONS = {".png": "PNG", ".ppm": "PPM"}


def read_image(path) -> np.ndarray:
    """Load an image as a (H, W, 3) uint8 array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FileNotFoundError:
        raise DataError(f"image file not found: {path}")
    except UnidentifiedImageError:
        raise DataError(f"not a readable image file: {path}")


def write_image(path, img) -> None:
    """Write a (H, W, 3) uint8 array; format chosen by extension (.png/.ppm)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected a (H, W, 3) uint8 image, got {img.shape} {img.dtype}")
    ext = os.path.splitext(str(path))[1].lower()
    fmt = _EXTENSIONS.get(ext)
    if fmt is None:
        raise ValueError(f"unsupported image extension {ext!r}; use one of {sorted(_EXTENSIONS)}")
    Image.fromarray(img, mode="RGB").save(path, format=fmt)
