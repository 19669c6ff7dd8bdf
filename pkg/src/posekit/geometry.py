"""Box arithmetic, square crops with zero padding, and coordinate mapping.

Boxes are continuous (sub-pixel corners allowed) with area
(x_max - x_min) * (y_max - y_min). At rasterization time pixel (r, c) of a
crop covers the half-open cell [x0 + c, x0 + c + 1) x [y0 + r, y0 + r + 1)
in source space, with the crop origin and side rounded to the pixel grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .skeleton import FLIP_MAP, Skeleton


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with continuous pixel corners, x_min <= x_max."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise ValueError(f"non-finite box corner in {self!r}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted box: {self!r}")

    @property
    def width(self):
        return self.x_max - self.x_min

    @property
    def height(self):
        return self.y_max - self.y_min

    @property
    def area(self):
        return self.width * self.height

    @property
    def center(self):
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class CropSpec:
    """A square source region plus the side of the raster it is resampled to."""

    source_square: BBox
    target_side: int

    def __post_init__(self):
        sq = self.source_square
        if abs(sq.width - sq.height) > 1e-6:
            raise ValueError(f"crop source is not square: {sq!r}")
        if self.target_side < 1:
            raise ValueError(f"target side must be >= 1, got {self.target_side}")


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes, in [0, 1].

    Raises ValueError when both boxes are degenerate (the union has zero
    area, so the ratio is undefined).
    """
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(0.0, ix) * max(0.0, iy)
    union = a.area + b.area - inter
    if union <= 0.0:
        raise ValueError("IoU is undefined for two zero-area boxes")
    return inter / union


def expand_about_center(b: BBox, factor: float) -> BBox:
    """Scale both sides of a box by `factor` about its center."""
    if not factor > 0:
        raise ValueError(f"expansion factor must be positive, got {factor}")
    cx, cy = b.center
    hw = b.width * factor / 2.0
    hh = b.height * factor / 2.0
    return BBox(cx - hw, cy - hh, cx + hw, cy + hh)


def tight_box(sk: Skeleton) -> BBox:
    """Tightest box covering every present joint of a skeleton."""
    if len(sk) == 0:
        raise ValueError("cannot take the tight box of an empty skeleton")
    xs = [p[0] for _, p in sk.items()]
    ys = [p[1] for _, p in sk.items()]
    return BBox(min(xs), min(ys), max(xs), max(ys))


def squarify(b: BBox) -> BBox:
    """Grow the shorter side to match the longer one, keeping the center."""
    if b.area <= 0:
        raise ValueError(f"cannot squarify a zero-area box: {b!r}")
    side = max(b.width, b.height)
    cx, cy = b.center
    h = side / 2.0
    return BBox(cx - h, cy - h, cx + h, cy + h)


def _check_image(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"expected a (H, W, 3) uint8 image, got {img.shape} {img.dtype}")
    return img


def crop_square_native(img, square: BBox) -> np.ndarray:
    """Copy the square region at native resolution, zero outside the image.

    The square is snapped to the pixel grid: origin and side are rounded,
    and output pixel (r, c) copies source pixel (y0 + r, x0 + c) when that
    index lies inside the image, else 0 on all channels.
    """
    img = _check_image(img)
    side = int(round(square.width))
    if side < 1:
        raise ValueError(f"crop square side must round to >= 1 pixel, got {square.width}")
    x0 = int(round(square.x_min))
    y0 = int(round(square.y_min))
    h, w = img.shape[:2]

    out = np.zeros((side, side, 3), dtype=np.uint8)
    sy0, sy1 = max(0, y0), min(h, y0 + side)
    sx0, sx1 = max(0, x0), min(w, x0 + side)
    if sy1 > sy0 and sx1 > sx0:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = img[sy0:sy1, sx0:sx1]
    return out


def resize_bilinear(img, side: int) -> np.ndarray:
    """Resize to side x side with bilinear sampling.

    Half-pixel-center alignment: output center (u + 0.5) maps to source
    coordinate (u + 0.5) * scale - 0.5, clamped to the source borders.
    An identity resize copies the buffer bit-exactly.
    """
    img = _check_image(img)
    if side < 1:
        raise ValueError(f"resize side must be >= 1, got {side}")
    h, w = img.shape[:2]
    if h == side and w == side:
        return img.copy()

    ys = np.clip((np.arange(side) + 0.5) * (h / side) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(side) + 0.5) * (w / side) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]

    src = img.astype(np.float64)
    tl = src[y0[:, None], x0[None, :]]
    tr = src[y0[:, None], x1[None, :]]
    bl = src[y1[:, None], x0[None, :]]
    br = src[y1[:, None], x1[None, :]]
    # lerp form keeps constant inputs exactly constant
    top = tl + fx * (tr - tl)
    bot = bl + fx * (br - bl)
    out = top + fy * (bot - top)
    return np.rint(out).clip(0, 255).astype(np.uint8)


def crop_zero_pad(img, square: BBox, target_side: int) -> np.ndarray:
    """Extract a zero-padded square region and resample it to target_side.

    Pixels whose source cell falls outside the image are zero on all
    channels; the padded crop is then resized bilinearly.
    """
    if target_side < 1:
        raise ValueError(f"target side must be >= 1, got {target_side}")
    return resize_bilinear(crop_square_native(img, square), target_side)


def to_crop_coords(p, crop: CropSpec):
    """Map a frame-space point into [0, 1] coordinates of the crop square.

    Points outside the square map outside [0, 1]; they are returned as-is
    for the caller to keep or flag.
    """
    sq = crop.source_square
    side = sq.width
    return ((p[0] - sq.x_min) / side, (p[1] - sq.y_min) / side)


def from_crop_coords(p_norm, crop: CropSpec):
    """Exact inverse of to_crop_coords."""
    sq = crop.source_square
    side = sq.width
    return (sq.x_min + p_norm[0] * side, sq.y_min + p_norm[1] * side)


def hflip_image(img) -> np.ndarray:
    """Mirror an image about its vertical axis (x -> W - 1 - x)."""
    return np.ascontiguousarray(np.asarray(img)[:, ::-1])


def hflip_skeleton(sk: Skeleton, width=None) -> Skeleton:
    """Mirror a skeleton horizontally and swap left/right joint identities.

    With width=None coordinates are treated as normalized and x maps to
    1 - x; with an integer pixel-grid width x maps to width - 1 - x.
    """
    flipped = {}
    for name, (x, y) in sk.items():
        new_x = (1.0 - x) if width is None else (width - 1.0 - x)
        flipped[FLIP_MAP[name]] = (new_x, y)
    return Skeleton(flipped)
