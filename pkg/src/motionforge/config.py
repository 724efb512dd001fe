"""Toolkit configuration: an INI-style file of sections and keys.

Precedence is command-line flags over the file over built-in defaults.
Unknown sections or keys are rejected. Ranges are written ``lo,hi``.

Example::

    [synthesis]
    preset = urfd-like
    n_steps = 10
    per_class = 200
    seed = 0

    [training]
    epochs = 100
    input_size = 64

    [streaming]
    window = 25
    interval = 25
    fps = 25

    [paths]
    persons = assets/persons
    backgrounds = assets/backgrounds
    dataset = data/synth
    checkpoint = runs/model.ckpt
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from motionforge.classifier import TrainConfig
from motionforge.streaming import WindowConfig
from motionforge.synthesis import PRESETS, BlendSettings, JitterConfig

CONFIG_ENV = "MOTIONFORGE_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class SynthesisSection:
    preset: str = "urfd-like"
    n_steps: int = 10
    per_class: int = 200
    seed: int = 0
    workers: int = 1
    scale: tuple[float, float] | None = None
    transition: tuple[float, float] | None = None
    floor_band: tuple[float, float] | None = None

    def blend_settings(self) -> BlendSettings:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        s = replace(PRESETS[self.preset], n_steps=self.n_steps)
        for name in ("scale", "transition", "floor_band"):
            v = getattr(self, name)
            if v is not None:
                s = replace(s, **{name: v})
        return s


@dataclass
class TrainingSection:
    batch_size: int = 32
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    input_size: int = 64
    val_fraction: float = 0.2
    widths: tuple[int, ...] = (16, 32, 64, 128)

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs, lr=self.lr,
                           weight_decay=self.weight_decay, beta1=self.beta1, beta2=self.beta2,
                           eps=self.eps, seed=self.seed)


@dataclass
class StreamingSection:
    window: int = 25
    stride: int = 1
    interval: int = 25
    fps: float = 25.0

    def window_config(self) -> WindowConfig:
        return WindowConfig(window=self.window, stride=self.stride, interval=self.interval, fps=self.fps)


@dataclass
class EvaluationSection:
    protocol: str = "video"
    ground_truth: str | None = None
    sweep: tuple[float, ...] | None = None


@dataclass
class PathsSection:
    persons: str | None = None
    backgrounds: str | None = None
    dataset: str | None = None
    checkpoint: str | None = None
    reports: str | None = None


@dataclass
class ToolkitConfig:
    synthesis: SynthesisSection = field(default_factory=SynthesisSection)
    jitter: JitterConfig = field(default_factory=JitterConfig)
    training: TrainingSection = field(default_factory=TrainingSection)
    streaming: StreamingSection = field(default_factory=StreamingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    paths: PathsSection = field(default_factory=PathsSection)


def _parse_value(raw: str, default: Any, type_hint: str) -> Any:
    raw = raw.strip()
    if "tuple" in type_hint:
        items = [x.strip() for x in raw.split(",") if x.strip()]
        elem = int if "int" in type_hint.split("tuple", 1)[1] else float
        return tuple(elem(x) for x in items)
    if type_hint.startswith("int"):
        return int(raw)
    if type_hint.startswith("float"):
        return float(raw)
    return raw


def _section_from(cls, items: dict[str, str], section: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"unknown key [{section}] {key}")
        f = known[key]
        try:
            kwargs[key] = _parse_value(raw, f.default, str(f.type))
        except ValueError:
            raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from None
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def load_config(path: str | Path | None = None) -> ToolkitConfig:
    """Read ``path`` (or ``$MOTIONFORGE_CONFIG``); no file means all defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        return ToolkitConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    sections = {f.name: f for f in fields(ToolkitConfig)}
    values = {}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"unknown section [{name}] in {path}")
        cls = sections[name].default_factory
        values[name] = _section_from(cls, dict(parser.items(name)), name)
    return ToolkitConfig(**values)


def override(section, **flags):
    """Copy of ``section`` with every non-None flag applied."""
    changes = {k: v for k, v in flags.items() if v is not None}
    try:
        return dataclasses.replace(section, **changes) if changes else section
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
