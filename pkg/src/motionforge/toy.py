"""Procedural stand-ins for person/mask and background photos.

Real corpora (segmented person photos, empty scenes) are not shipped; these
generators draw articulated stick-body figures and simple indoor scenes so the
whole pipeline can be exercised end to end at desk scale.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from motionforge.imaging import write_image, write_mask


def _disk(mask: np.ndarray, cx: float, cy: float, r: float) -> None:
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w]
    mask[(xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r] = True


def _capsule(mask: np.ndarray, p: tuple[float, float], q: tuple[float, float], r: float) -> None:
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w]
    px, py = xx + 0.5 - p[0], yy + 0.5 - p[1]
    dx, dy = q[0] - p[0], q[1] - p[1]
    t = np.clip((px * dx + py * dy) / max(dx * dx + dy * dy, 1e-9), 0.0, 1.0)
    mask[(px - t * dx) ** 2 + (py - t * dy) ** 2 <= r * r] = True


def make_person(rng: np.random.Generator, width: int = 40, height: int = 80
                ) -> tuple[np.ndarray, np.ndarray]:
    """An upright figure on a cluttered backdrop, with its binary mask."""
    body = np.zeros((height, width), dtype=bool)
    legs = np.zeros_like(body)
    head = np.zeros_like(body)
    cx = width / 2 + rng.uniform(-1.5, 1.5)
    top = rng.uniform(1, 3)
    head_r = rng.uniform(0.085, 0.11) * height
    neck = top + 2 * head_r
    hip = neck + rng.uniform(0.33, 0.4) * height
    foot = height - 0.5
    thick = rng.uniform(0.09, 0.13) * width * 2
    limb = thick * rng.uniform(0.3, 0.42)
    _disk(head, cx, top + head_r, head_r)
    _capsule(body, (cx, neck + thick / 2), (cx, hip - thick / 3), thick / 2)
    stride = rng.uniform(0.0, 0.18) * width
    _capsule(legs, (cx - thick / 4, hip), (cx - thick / 4 - stride, foot - limb), limb)
    _capsule(legs, (cx + thick / 4, hip), (cx + thick / 4 + stride, foot - limb), limb)
    swing = rng.uniform(0.1, 0.35) * width
    shoulder = neck + thick / 2
    hand_y = hip + rng.uniform(-0.05, 0.05) * height
    _capsule(body, (cx - thick / 2, shoulder), (max(cx - thick / 2 - swing, limb), hand_y), limb * 0.8)
    _capsule(body, (cx + thick / 2, shoulder), (min(cx + thick / 2 + swing, width - limb), hand_y),
             limb * 0.8)
    mask = body | legs | head

    img = rng.integers(0, 256, size=(height, width, 3)).astype(np.float64)
    img = 0.5 * img + 0.5 * rng.uniform(0, 255, size=3)
    shirt = rng.uniform(30, 230, size=3)
    trousers = rng.uniform(20, 200, size=3)
    skin = np.array([rng.uniform(120, 240), rng.uniform(80, 190), rng.uniform(60, 160)])
    shade = 1.0 + 0.1 * rng.standard_normal((height, width, 1))
    img[body] = (shirt * shade[body]).clip(0, 255)
    img[legs] = (trousers * shade[legs]).clip(0, 255)
    img[head] = skin
    return img.round().astype(np.uint8), np.where(mask, 255, 0).astype(np.uint8)


def make_background(rng: np.random.Generator, width: int = 128, height: int = 96) -> np.ndarray:
    """A wall, a floor and a few pieces of clutter, with mild sensor noise."""
    horizon = int(height * rng.uniform(0.45, 0.65))
    wall = rng.uniform(60, 230, size=3)
    floor = rng.uniform(40, 200, size=3)
    yy = np.arange(height)[:, None, None] / height
    img = np.where(np.arange(height)[:, None, None] < horizon,
                   wall * (0.85 + 0.3 * yy), floor * (0.7 + 0.4 * yy))
    img = np.broadcast_to(img, (height, width, 3)).copy()
    for _ in range(rng.integers(1, 4)):
        w = int(rng.uniform(0.05, 0.15) * width)
        h = int(rng.uniform(0.1, 0.35) * height)
        x = int(rng.choice([rng.uniform(0, 0.2), rng.uniform(0.8, 1.0)]) * (width - w))
        y = int(rng.uniform(0.1, 0.6) * height)
        img[y:y + h, x:x + w] = rng.uniform(0, 255, size=3)
    img += rng.normal(0, 3, size=img.shape)
    return img.clip(0, 255).round().astype(np.uint8)


def write_toy_assets(out_dir: str | Path, n_persons: int = 24, n_backgrounds: int = 10,
                     seed: int = 0, background_size: tuple[int, int] = (128, 96)
                     ) -> tuple[Path, Path]:
    """Write ``persons/<id>/{image,mask}.png`` and ``backgrounds/<id>.png`` under ``out_dir``."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    persons, backgrounds = out_dir / "persons", out_dir / "backgrounds"
    for i in range(n_persons):
        d = persons / f"p{i:04d}"
        d.mkdir(parents=True, exist_ok=True)
        w = int(rng.integers(34, 46))
        h = int(rng.integers(72, 90))
        img, mask = make_person(rng, w, h)
        write_image(d / "image.png", img)
        write_mask(d / "mask.png", mask)
    backgrounds.mkdir(parents=True, exist_ok=True)
    for i in range(n_backgrounds):
        write_image(backgrounds / f"bg{i:03d}.png", make_background(rng, *background_size))
    return persons, backgrounds
