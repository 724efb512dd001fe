"""Sliding mean-frame inference over a frame stream.

Frames are numbered from 1. With stride ``k`` only frames whose index is a
multiple of ``k`` are retained; the window keeps the latest ``N`` of them
together with their per-pixel integer sum, so the mean frame costs one
subtraction and one addition per retained frame regardless of ``N``.
Detections happen on the grid ``T = interval, 2*interval, ...`` once the
window is full, i.e. from the first grid point at or after frame ``k*N``.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from motionforge.classifier import ModelArchitecture, Params, forward, softmax
from motionforge.dataset import to_tensor
from motionforge.imaging import check_image, mean_from_sum, read_image
from motionforge.synthesis import ACTIONS, ActionKind


class StreamError(ValueError):
    pass


def seconds_to_frames(seconds: float, fps: float) -> int:
    """``round(seconds * fps)`` with halves rounded up."""
    return int(math.floor(seconds * fps + 0.5))


@dataclass(frozen=True)
class WindowConfig:
    window: int = 25      # N, retained frames per detection
    stride: int = 1       # k
    interval: int = 25    # frames between detections
    fps: float = 25.0

    def __post_init__(self):
        if self.window < 1 or self.stride < 1 or self.interval < 1:
            raise StreamError("window, stride and interval must all be >= 1")
        if self.fps <= 0:
            raise StreamError("fps must be > 0")

    @classmethod
    def from_seconds(cls, window_s: float, interval_s: float | None = None, fps: float = 25.0,
                     stride: int = 1) -> "WindowConfig":
        interval_s = window_s if interval_s is None else interval_s
        n = max(1, seconds_to_frames(window_s, fps) // stride)
        return cls(window=n, stride=stride,
                   interval=max(1, seconds_to_frames(interval_s, fps)), fps=fps)

    @property
    def warm_index(self) -> int:
        """1-based index of the frame that completes the first full window."""
        return self.stride * self.window

    @property
    def first_detection(self) -> int:
        return -(-self.warm_index // self.interval) * self.interval

    def detection_indices(self, n_frames: int) -> list[int]:
        return list(range(self.first_detection, n_frames + 1, self.interval))


class FrameWindow:
    """Ring buffer of the latest ``capacity`` retained frames plus their running sum."""

    def __init__(self, capacity: int, stride: int = 1):
        if capacity < 1 or stride < 1:
            raise StreamError("capacity and stride must be >= 1")
        self.capacity = capacity
        self.stride = stride
        self.reset()

    def reset(self) -> None:
        self._ring: np.ndarray | None = None
        self._sum: np.ndarray | None = None
        self._head = 0
        self.count = 0
        self.last_index = 0
        self.retained_indices: deque[int] = deque()

    @property
    def shape(self) -> tuple[int, ...] | None:
        return None if self._sum is None else self._sum.shape

    @property
    def full(self) -> bool:
        return self.count == self.capacity

    @property
    def rolling_sum(self) -> np.ndarray:
        if self._sum is None:
            raise StreamError("warm-up incomplete")
        return self._sum

    def frames(self) -> list[np.ndarray]:
        """Retained frames, oldest first."""
        if self._ring is None:
            return []
        start = (self._head - self.count) % self.capacity
        return [self._ring[(start + i) % self.capacity] for i in range(self.count)]

    def push(self, frame: np.ndarray) -> bool:
        """Ingest the next frame; returns whether it was retained."""
        check_image(frame, "frame")
        if self._sum is None:
            self._ring = np.zeros((self.capacity,) + frame.shape, dtype=np.uint8)
            self._sum = np.zeros(frame.shape, dtype=np.int32 if self.capacity < 2 ** 23 else np.int64)
        elif frame.shape != self._sum.shape:
            raise StreamError(f"frame size changed mid-stream: {frame.shape} != {self._sum.shape}")
        self.last_index += 1
        if self.last_index % self.stride:
            return False
        slot = self._ring[self._head]
        if self.count == self.capacity:
            self._sum -= slot
            self.retained_indices.popleft()
        else:
            self.count += 1
        self._sum += frame
        slot[...] = frame
        self._head = (self._head + 1) % self.capacity
        self.retained_indices.append(self.last_index)
        return True

    def mean_frame(self) -> np.ndarray:
        if self.count == 0:
            raise StreamError("warm-up incomplete")
        return mean_from_sum(self._sum, self.count)


@dataclass(frozen=True)
class Detection:
    frame_index: int
    action: ActionKind
    probabilities: tuple[float, float, float, float]
    mean_frame: np.ndarray | None = None

    @property
    def fall(self) -> bool:
        return self.action is ActionKind.FALLING

    def to_record(self) -> str:
        return json.dumps({
            "frame": self.frame_index,
            "action": self.action.value,
            "probabilities": {a.value: round(p, 6) for a, p in zip(ACTIONS, self.probabilities)},
            "fall": self.fall,
        }, sort_keys=True)


class Classifier:
    """Parameters plus architecture, applied to single mean frames."""

    def __init__(self, params: Params, arch: ModelArchitecture):
        self.params = params
        self.arch = arch

    def probabilities(self, image: np.ndarray) -> np.ndarray:
        x = to_tensor(image, self.arch.input_size)[None]
        return softmax(forward(self.params, x, self.arch).astype(np.float64))[0]


def predict_at(window: FrameWindow, model: Classifier, keep_frame: bool = False) -> Detection:
    if not window.full:
        raise StreamError("cold window: fewer than N retained frames")
    mean = window.mean_frame()
    probs = model.probabilities(mean)
    return Detection(
        frame_index=window.last_index,
        action=ACTIONS[int(np.argmax(probs))],
        probabilities=tuple(float(p) for p in probs),
        mean_frame=mean if keep_frame else None,
    )


def iter_detections(frames: Iterable[np.ndarray], model: Classifier, cfg: WindowConfig,
                    keep_frames: bool = False) -> Iterator[Detection]:
    window = FrameWindow(cfg.window, cfg.stride)
    for frame in frames:
        window.push(frame)
        t = window.last_index
        if t % cfg.interval == 0 and window.full:
            yield predict_at(window, model, keep_frame=keep_frames)


def detect_over_video(frames: Iterable[np.ndarray], model: Classifier, cfg: WindowConfig,
                      keep_frames: bool = False) -> list[Detection]:
    """All detections for one stream; too-short streams give an empty list."""
    return list(iter_detections(frames, model, cfg, keep_frames))


def offline_window(frames: Sequence[np.ndarray], t: int, cfg: WindowConfig) -> list[np.ndarray]:
    """The retained frames a window holds after ingesting frame ``t`` (1-based)."""
    retained = [i for i in range(cfg.stride, t + 1, cfg.stride)][-cfg.window:]
    return [frames[i - 1] for i in retained]


def list_frames(video_dir: str | Path) -> list[Path]:
    """PNG frames in lexicographic (= temporal) order."""
    video_dir = Path(video_dir)
    if not video_dir.is_dir():
        raise StreamError(f"frame directory not found: {video_dir}")
    return sorted(p for p in video_dir.iterdir() if p.suffix.lower() == ".png")


def read_frames(video_dir: str | Path) -> Iterator[np.ndarray]:
    for p in list_frames(video_dir):
        yield read_image(p)
