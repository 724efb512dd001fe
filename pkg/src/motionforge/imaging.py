"""Pixel primitives: 8-bit RGB buffers, binary masks, affine warping,
hard-mask compositing and exact integer mean stacking.

Images are plain ``numpy.ndarray`` objects of shape ``(H, W, 3)`` and dtype
``uint8``; masks are ``(H, W)`` ``uint8`` arrays holding only 0 or 255.

Coordinates are continuous with pixel ``(row i, col j)`` covering the square
``[j, j+1) x [i, i+1)``, so its center sits at ``(j + 0.5, i + 0.5)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

MASK_THRESHOLD = 128


class ImagingError(ValueError):
    pass


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    if not isinstance(img, np.ndarray) or img.dtype != np.uint8:
        raise ImagingError(f"{name} must be a uint8 ndarray")
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImagingError(f"{name} must have shape (H, W, 3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ImagingError(f"{name} must be at least 1x1")
    return img


def normalize_mask(mask: np.ndarray) -> np.ndarray:
    """Threshold any 8-bit mask (2-D, or 3-D with replicated channels) to {0, 255}."""
    mask = np.asarray(mask)
    if mask.ndim == 3:
        mask = mask[..., 0]
    if mask.ndim != 2:
        raise ImagingError(f"mask must be 2-D, got shape {mask.shape}")
    return np.where(mask >= MASK_THRESHOLD, 255, 0).astype(np.uint8)


@dataclass(frozen=True)
class AffineTransform:
    """Forward map ``dst = L @ src + t`` stored as a 2x3 matrix ``[L | t]``."""

    matrix: np.ndarray = field(default_factory=lambda: np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ImagingError(f"affine matrix must be 2x3, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls()

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy]]))

    @classmethod
    def scaling(cls, sx: float, sy: float | None = None) -> "AffineTransform":
        sy = sx if sy is None else sy
        return cls(np.array([[sx, 0.0, 0.0], [0.0, sy, 0.0]]))

    @classmethod
    def rotation(cls, degrees: float) -> "AffineTransform":
        """Rotation about the origin; positive angles turn +x toward +y (clockwise on screen)."""
        a = np.deg2rad(degrees)
        c, s = np.cos(a), np.sin(a)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0]]))

    @property
    def determinant(self) -> float:
        m = self.matrix
        return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """Return ``self o other`` (apply ``other`` first)."""
        a = np.vstack([self.matrix, [0.0, 0.0, 1.0]])
        b = np.vstack([other.matrix, [0.0, 0.0, 1.0]])
        return AffineTransform((a @ b)[:2])

    def __matmul__(self, other: "AffineTransform") -> "AffineTransform":
        return self.compose(other)

    def inverse(self) -> "AffineTransform":
        det = self.determinant
        if det == 0.0 or not np.isfinite(det):
            raise ImagingError("non-invertible transform")
        (a, b, tx), (c, d, ty) = self.matrix
        ia, ib, ic, id_ = d / det, -b / det, -c / det, a / det
        return AffineTransform(np.array([
            [ia, ib, -(ia * tx + ib * ty)],
            [ic, id_, -(ic * tx + id_ * ty)],
        ]))

    def apply(self, x: float, y: float) -> tuple[float, float]:
        m = self.matrix
        return (float(m[0, 0] * x + m[0, 1] * y + m[0, 2]),
                float(m[1, 0] * x + m[1, 1] * y + m[1, 2]))


@dataclass(frozen=True)
class Sprite:
    """A cut-out: RGB pixels, a binary alpha mask and a reference point (the feet)."""

    pixels: np.ndarray
    alpha: np.ndarray
    anchor: tuple[float, float]

    def __post_init__(self):
        check_image(self.pixels, "sprite pixels")
        if self.alpha.shape != self.pixels.shape[:2]:
            raise ImagingError("sprite pixels and alpha differ in size")
        ax, ay = self.anchor
        h, w = self.alpha.shape
        if not (0.0 <= ax <= w and 0.0 <= ay <= h):
            raise ImagingError(f"anchor {self.anchor} outside sprite bounds {w}x{h}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(values + 0.5)


def affine_warp(src: Sprite, t: AffineTransform, out_width: int, out_height: int) -> Sprite:
    """Resample ``src`` into an ``out_width x out_height`` canvas through ``t``.

    Each output pixel center is mapped back into the source. Color is sampled
    bilinearly with edge clamping, alpha by nearest neighbour; locations whose
    nearest source pixel lies outside the source get alpha 0 (and black).
    """
    if out_width < 1 or out_height < 1:
        raise ImagingError("output dimensions must be >= 1")
    inv = t.inverse().matrix
    h, w = src.alpha.shape

    xs = np.arange(out_width, dtype=np.float64) + 0.5
    ys = np.arange(out_height, dtype=np.float64) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    sx = inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2]
    sy = inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2]

    # nearest neighbour for alpha: the source pixel containing the point
    with np.errstate(invalid="ignore"):
        nx = np.floor(sx)
        ny = np.floor(sy)
    inside = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
    nxi = np.where(inside, nx, 0).astype(np.intp)
    nyi = np.where(inside, ny, 0).astype(np.intp)
    alpha = np.where(inside, src.alpha[nyi, nxi], 0).astype(np.uint8)

    # bilinear for color, sample grid at pixel centers
    px = np.where(inside, sx - 0.5, 0.0)
    py = np.where(inside, sy - 0.5, 0.0)
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = (px - x0)[..., None]
    fy = (py - y0)[..., None]
    x0i = np.clip(x0, 0, w - 1).astype(np.intp)
    y0i = np.clip(y0, 0, h - 1).astype(np.intp)
    x1i = np.clip(x0 + 1, 0, w - 1).astype(np.intp)
    y1i = np.clip(y0 + 1, 0, h - 1).astype(np.intp)
    img = src.pixels.astype(np.float64)
    p00 = img[y0i, x0i]
    p10 = img[y0i, x1i]
    p01 = img[y1i, x0i]
    p11 = img[y1i, x1i]
    val = (1.0 - fx) * (1.0 - fy) * p00 + fx * (1.0 - fy) * p10 + (1.0 - fx) * fy * p01 + fx * fy * p11
    pixels = np.clip(_round_half_up(val), 0, 255).astype(np.uint8)
    pixels[~inside] = 0

    ax, ay = t.apply(*src.anchor)
    ax = min(max(ax, 0.0), float(out_width))
    ay = min(max(ay, 0.0), float(out_height))
    return Sprite(pixels, alpha, (ax, ay))


def alpha_composite(background: np.ndarray, sprite: Sprite) -> np.ndarray:
    """Paste ``sprite`` over ``background`` with a hard binary mask. Returns a new image."""
    check_image(background, "background")
    if sprite.pixels.shape != background.shape:
        raise ImagingError(
            f"sprite {sprite.pixels.shape} does not match background {background.shape}")
    on = (sprite.alpha >= MASK_THRESHOLD)[..., None]
    return np.where(on, sprite.pixels, background)


def sum_frames(frames: Sequence[np.ndarray]) -> np.ndarray:
    if len(frames) == 0:
        raise ImagingError("cannot average an empty sequence")
    shape = frames[0].shape
    acc = np.zeros(shape, dtype=np.int64)
    for f in frames:
        if f.shape != shape:
            raise ImagingError(f"frame shape {f.shape} differs from {shape}")
        acc += f
    return acc


def mean_from_sum(total: np.ndarray, count: int) -> np.ndarray:
    """Round-half-up integer mean: ``floor(total / count + 1/2)`` without floats."""
    if count < 1:
        raise ImagingError("count must be >= 1")
    return ((2 * total.astype(np.int64) + count) // (2 * count)).astype(np.uint8)


def mean_stack(frames: Sequence[np.ndarray]) -> np.ndarray:
    """Per-pixel, per-channel mean of equally sized frames."""
    return mean_from_sum(sum_frames(frames), len(frames))


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping, float64 output.

    Works on ``(H, W)`` or ``(H, W, C)`` arrays; no antialiasing on downscale.
    """
    h, w = img.shape[:2]
    src = img.astype(np.float64)
    if (h, w) == (out_h, out_w):
        return src
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    if src.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def read_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def read_mask(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "1"):
            im = im.convert("RGB")
        else:
            im = im.convert("L")
        return normalize_mask(np.asarray(im))


def write_image(path: str | Path, img: np.ndarray) -> None:
    check_image(img)
    Image.fromarray(img).save(path, format="PNG")


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    Image.fromarray(normalize_mask(mask)).save(path, format="PNG")
