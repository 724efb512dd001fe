"""Synthetic motion images: jitter a masked person, cut it out, script a
motion as N affine poses, paste each pose into a background and keep either
the last frame (static actions) or the mean of all frames (moving actions).
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from motionforge.imaging import (
    AffineTransform,
    ImagingError,
    Sprite,
    affine_warp,
    alpha_composite,
    check_image,
    mean_stack,
)


class SynthesisError(ValueError):
    pass


class ActionKind(enum.Enum):
    FALLING = "falling"
    WALKING = "walking"
    STANDING = "standing"
    LYING_DOWN = "lying_down"

    @property
    def motional(self) -> bool:
        return self in (ActionKind.FALLING, ActionKind.WALKING)

    @property
    def index(self) -> int:
        return ACTIONS.index(self)

    @classmethod
    def from_index(cls, i: int) -> "ActionKind":
        return ACTIONS[i]


# class-index order used by the classifier: falling=0, walking=1, standing=2, lying_down=3
ACTIONS: tuple[ActionKind, ...] = (
    ActionKind.FALLING, ActionKind.WALKING, ActionKind.STANDING, ActionKind.LYING_DOWN)


def _check_range(name: str, lo_hi: tuple[float, float]):
    lo, hi = lo_hi
    if lo > hi:
        raise SynthesisError(f"{name}: lower bound {lo} exceeds upper bound {hi}")


@dataclass(frozen=True)
class JitterConfig:
    """Photometric jitter plus horizontal flip. Each effect fires with its own probability."""

    p_brightness: float = 0.5
    brightness: tuple[float, float] = (-0.2, 0.2)
    p_contrast: float = 0.5
    contrast: tuple[float, float] = (0.8, 1.25)
    p_hue: float = 0.3
    hue: tuple[float, float] = (-0.05, 0.05)
    p_blur: float = 0.2
    blur_sigma: tuple[float, float] = (0.0, 1.5)
    p_noise: float = 0.3
    noise_sigma: tuple[float, float] = (0.0, 8.0)
    p_flip: float = 0.5

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name.startswith("p_"):
                if not 0.0 <= v <= 1.0:
                    raise SynthesisError(f"{f.name} must lie in [0, 1], got {v}")
            else:
                _check_range(f.name, v)

    @classmethod
    def disabled(cls) -> "JitterConfig":
        return cls(p_brightness=0, p_contrast=0, p_hue=0, p_blur=0, p_noise=0, p_flip=0)


@dataclass(frozen=True)
class BlendSettings:
    """Placement and motion ranges.

    ``scale`` is the person height as a fraction of background height,
    ``transition`` the per-step horizontal displacement as a fraction of
    background width, ``floor_band`` the vertical range (fraction of height)
    for the feet, ``fall_drift`` the total downward anchor drift of a fall
    (fraction of background height) and ``fall_angle`` the final torso angle
    range in degrees.
    """

    scale: tuple[float, float] = (0.45, 0.7)
    transition: tuple[float, float] = (0.01, 0.03)
    floor_band: tuple[float, float] = (0.8, 0.95)
    fall_angle: tuple[float, float] = (70.0, 90.0)
    fall_drift: tuple[float, float] = (0.0, 0.04)
    n_steps: int = 10

    def __post_init__(self):
        for name in ("scale", "transition", "floor_band", "fall_angle", "fall_drift"):
            _check_range(name, getattr(self, name))
        if not (0.0 < self.scale[0] and self.scale[1] <= 1.0):
            raise SynthesisError("scale range must lie within (0, 1]")
        if self.transition[0] < 0 or self.fall_drift[0] < 0:
            raise SynthesisError("transition magnitudes must be nonnegative")
        if not (0.0 <= self.floor_band[0] and self.floor_band[1] <= 1.0):
            raise SynthesisError("floor_band must lie within [0, 1]")
        if not (0.0 <= self.fall_angle[0] and self.fall_angle[1] <= 90.0):
            raise SynthesisError("fall_angle must lie within [0, 90] degrees")
        if self.n_steps < 1:
            raise SynthesisError("n_steps must be >= 1")

    def digest(self) -> str:
        return settings_hash(self)


PRESETS: dict[str, BlendSettings] = {
    "urfd-like": BlendSettings(scale=(0.45, 0.7), transition=(0.01, 0.03)),
    "aihub-like": BlendSettings(scale=(0.25, 0.45), transition=(0.02, 0.05)),
}


def settings_hash(*configs) -> str:
    payload = json.dumps([dataclasses.asdict(c) for c in configs], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class MotionScript:
    """The pose set for one action, with the torso angle and foot position of every pose."""

    action: ActionKind
    poses: tuple[AffineTransform, ...]
    angles: tuple[float, ...]
    anchors: tuple[tuple[float, float], ...]
    scale: float

    @property
    def n_steps(self) -> int:
        return len(self.poses)


@dataclass(frozen=True)
class TrainingSample:
    image: np.ndarray
    label: ActionKind
    person_id: str = ""
    background_id: str = ""
    seed: int = 0
    settings_hash: str = ""
    source: str = field(default="")  # "last" (r_N) or "mean" (average of all frames)


# --------------------------------------------------------------------- jitter

def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.where(mx == r, ((g - b) / safe) % 6.0,
                 np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(delta > 0, h / 6.0, 0.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    i = i.astype(np.int64) % 6
    choices_r = [v, q, p, p, t, v]
    choices_g = [t, v, v, q, p, p]
    choices_b = [p, p, t, v, v, q]
    return np.stack([np.choose(i, choices_r), np.choose(i, choices_g), np.choose(i, choices_b)], axis=-1)


def jitter(x: np.ndarray, m: np.ndarray, cfg: JitterConfig, rng_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Apply a random subset of photometric effects (pixels only) and maybe a flip (both)."""
    check_image(x, "person image")
    if m.shape != x.shape[:2]:
        raise SynthesisError("person image and mask differ in size")
    rng = np.random.default_rng(rng_seed)
    # draw every decision up front so the random stream does not depend on which effects fire
    draws = rng.random(6)
    img = x.astype(np.float64)
    touched = False

    if draws[0] < cfg.p_brightness:
        img = img + 255.0 * rng.uniform(*cfg.brightness)
        touched = True
    if draws[1] < cfg.p_contrast:
        mean = img.mean()
        img = (img - mean) * rng.uniform(*cfg.contrast) + mean
        touched = True
    if draws[2] < cfg.p_hue:
        hsv = _rgb_to_hsv(np.clip(img, 0, 255) / 255.0)
        hsv[..., 0] = (hsv[..., 0] + rng.uniform(*cfg.hue)) % 1.0
        img = _hsv_to_rgb(hsv) * 255.0
        touched = True
    if draws[3] < cfg.p_blur:
        sigma = rng.uniform(*cfg.blur_sigma)
        if sigma > 0:
            img = ndimage.gaussian_filter(img, sigma=(sigma, sigma, 0), mode="nearest")
        touched = True
    if draws[4] < cfg.p_noise:
        img = img + rng.normal(0.0, rng.uniform(*cfg.noise_sigma), size=img.shape)
        touched = True

    out = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8) if touched else x.copy()
    mask = m.copy()
    if draws[5] < cfg.p_flip:
        out = out[:, ::-1].copy()
        mask = mask[:, ::-1].copy()
    return out, mask


# --------------------------------------------------------------------- cutout

def cutout(x: np.ndarray, m: np.ndarray) -> Sprite:
    """Crop to the mask's bounding box; anchor at the bottom-center of the box."""
    check_image(x, "person image")
    if m.shape != x.shape[:2]:
        raise SynthesisError("person image and mask differ in size")
    on = m >= 128
    rows = np.flatnonzero(on.any(axis=1))
    cols = np.flatnonzero(on.any(axis=0))
    if rows.size == 0:
        raise SynthesisError("empty person mask")
    r0, r1 = rows[0], rows[-1] + 1
    c0, c1 = cols[0], cols[-1] + 1
    pixels = x[r0:r1, c0:c1].copy()
    alpha = np.where(on[r0:r1, c0:c1], 255, 0).astype(np.uint8)
    return Sprite(pixels, alpha, ((c1 - c0) / 2.0, float(r1 - r0)))


# --------------------------------------------------------------------- scripts

def pose_transform(anchor_src: tuple[float, float], scale: float, angle_deg: float,
                   anchor_dst: tuple[float, float]) -> AffineTransform:
    """Scale and rotate about the sprite anchor, then move the anchor to ``anchor_dst``."""
    return (AffineTransform.translation(*anchor_dst)
            @ AffineTransform.rotation(angle_deg)
            @ AffineTransform.scaling(scale)
            @ AffineTransform.translation(-anchor_src[0], -anchor_src[1]))


def script_for_action(action: ActionKind, settings: BlendSettings, sprite_size: tuple[int, int],
                      background_size: tuple[int, int], rng_seed: int,
                      anchor: tuple[float, float] | None = None) -> MotionScript:
    """Draw a pose sequence for ``action``.

    ``sprite_size`` and ``background_size`` are ``(width, height)``. ``anchor``
    defaults to the bottom-center of the sprite.
    """
    sw, sh = sprite_size
    bw, bh = background_size
    anchor = anchor if anchor is not None else (sw / 2.0, float(sh))
    n = settings.n_steps
    rng = np.random.default_rng(rng_seed)
    # fixed draw order keeps scripts reproducible across actions
    u_scale, u_floor, u_entry, u_dir, u_angle, u_step, u_drift, u_phase = rng.random(8)

    def lerp(rng_pair, u):
        return rng_pair[0] + (rng_pair[1] - rng_pair[0]) * u

    height_px = lerp(settings.scale, u_scale) * bh
    scale = height_px / sh
    if sh * scale > bh + 1e-9 or sw * scale > bw + 1e-9:
        raise SynthesisError("sprite exceeds background")
    # lying down spans the sprite height horizontally
    if action is ActionKind.LYING_DOWN and sh * scale > bw + 1e-9:
        raise SynthesisError("sprite exceeds background")
    floor_y = lerp(settings.floor_band, u_floor) * bh
    direction = 1.0 if u_dir < 0.5 else -1.0
    half_w = sw * scale / 2.0

    if action is ActionKind.WALKING:
        step = lerp(settings.transition, u_step) * bw
        span = step * (n - 1)
        lo, hi = half_w, bw - half_w - span
        if hi < lo:
            lo = hi = (bw - span) / 2.0
        start = lerp((lo, hi), u_entry)
        if direction < 0:
            start = bw - start
        bob = 0.02 * sh * scale
        xs = [start + direction * step * i for i in range(n)]
        ys = [floor_y - bob * abs(np.sin(np.pi * (i / 2.0 + u_phase))) for i in range(n)]
        angles = [0.0] * n
    elif action is ActionKind.FALLING:
        final = lerp(settings.fall_angle, u_angle)
        reach = sh * scale
        lo, hi = half_w, bw - half_w
        # keep room on the side the body falls toward
        if direction > 0:
            hi = max(lo, bw - reach)
        else:
            lo = min(hi, reach)
        x0 = lerp((lo, hi), u_entry)
        drift = lerp(settings.fall_drift, u_drift) * bh
        step = lerp(settings.transition, u_step) * bw * 0.25
        fr = [1.0] if n == 1 else [i / (n - 1) for i in range(n)]
        angles = [final * f ** 1.5 for f in fr]
        xs = [x0 + direction * step * f * (n - 1) for f in fr]
        ys = [floor_y + drift * f ** 1.5 for f in fr]
    elif action is ActionKind.STANDING:
        x0 = lerp((half_w, bw - half_w), u_entry)
        xs, ys, angles = [x0] * n, [floor_y] * n, [0.0] * n
    elif action is ActionKind.LYING_DOWN:
        reach = sh * scale
        lo, hi = (0.0, bw - reach) if direction > 0 else (reach, bw)
        x0 = lerp((lo, hi), u_entry)
        # lift so the rotated body rests on the floor line
        y0 = floor_y - half_w
        xs, ys, angles = [x0] * n, [y0] * n, [90.0] * n
    else:  # pragma: no cover
        raise SynthesisError(f"unknown action {action!r}")

    # positive rotation tips the head toward +x
    signed = [direction * a for a in angles]
    poses = tuple(pose_transform(anchor, scale, a, (x, y)) for a, x, y in zip(signed, xs, ys))
    return MotionScript(
        action=action,
        poses=poses,
        angles=tuple(float(a) for a in angles),
        anchors=tuple((float(x), float(y)) for x, y in zip(xs, ys)),
        scale=float(scale),
    )


# --------------------------------------------------------------------- rendering

def render_sequence(sprite: Sprite, b: np.ndarray, script: MotionScript) -> list[np.ndarray]:
    """Paste the sprite into ``b`` once per pose; ``b`` is left untouched."""
    check_image(b, "background")
    h, w = b.shape[:2]
    return [alpha_composite(b, affine_warp(sprite, t, w, h)) for t in script.poses]


def derive_seeds(seed: int, n: int = 2) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in ss.spawn(n)]


def sample_seed(global_seed: int, index: int) -> int:
    """Independent per-sample seed from ``(global_seed, index)``."""
    return int(np.random.SeedSequence([global_seed, index]).generate_state(1, dtype=np.uint32)[0])


def synthesize_frames(person_image: np.ndarray, person_mask: np.ndarray, background: np.ndarray,
                      action: ActionKind, settings: BlendSettings, cfg: JitterConfig,
                      seed: int) -> list[np.ndarray]:
    """The full rendered sequence r_1..r_N for one seed."""
    jitter_seed, script_seed = derive_seeds(seed)
    x_hat, m_hat = jitter(person_image, person_mask, cfg, jitter_seed)
    sprite = cutout(x_hat, m_hat)
    bh, bw = background.shape[:2]
    script = script_for_action(action, settings, (sprite.width, sprite.height), (bw, bh),
                               script_seed, anchor=sprite.anchor)
    return render_sequence(sprite, background, script)


def synthesize_sample(person, background, action: ActionKind, settings: BlendSettings,
                      cfg: JitterConfig, seed: int) -> TrainingSample:
    """One labelled image: the last frame for static actions, the mean frame for moving ones.

    ``person`` needs ``id``, ``image`` and ``mask``; ``background`` needs ``id`` and ``image``.
    """
    frames = synthesize_frames(person.image, person.mask, background.image, action,
                               settings, cfg, seed)
    if action.motional:
        image, source = mean_stack(frames), "mean"
    else:
        image, source = frames[-1], "last"
    return TrainingSample(
        image=image,
        label=action,
        person_id=person.id,
        background_id=background.id,
        seed=seed,
        settings_hash=settings_hash(settings, cfg),
        source=source,
    )


def contact_sheet(frames: Sequence[np.ndarray], gap: int = 2) -> np.ndarray:
    """Frames plus their mean side by side, for previews."""
    row = list(frames) + [mean_stack(frames)]
    h, w = row[0].shape[:2]
    sheet = np.full((h, len(row) * (w + gap) - gap, 3), 255, dtype=np.uint8)
    for i, f in enumerate(row):
        sheet[:, i * (w + gap): i * (w + gap) + w] = f
    return sheet


__all__ = [
    "ACTIONS", "ActionKind", "BlendSettings", "ImagingError", "JitterConfig", "MotionScript",
    "PRESETS", "SynthesisError", "TrainingSample", "contact_sheet", "cutout", "derive_seeds",
    "jitter", "pose_transform", "render_sequence", "sample_seed", "script_for_action",
    "settings_hash", "synthesize_frames", "synthesize_sample",
]
