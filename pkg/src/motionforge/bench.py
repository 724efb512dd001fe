"""Throughput of the streaming path on synthetic frames.

Two numbers matter: mean-frame throughput (push + rolling mean only), which
should not depend on the window length, and full pipeline throughput (push,
mean, resize, forward, softmax on every frame).
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from motionforge.streaming import Classifier, FrameWindow, predict_at


@dataclass(frozen=True)
class Throughput:
    label: str
    window: int
    frames: int
    fps: float
    mean_ms: float
    p95_ms: float

    def as_dict(self) -> dict:
        return {"stage": self.label, "window": self.window, "frames": self.frames,
                "fps": round(self.fps, 2), "mean_ms": round(self.mean_ms, 4),
                "p95_ms": round(self.p95_ms, 4)}


def synthetic_stream(n_distinct: int, size: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(n_distinct, size, size, 3), dtype=np.uint8)


def _summarize(label: str, window: int, lat: np.ndarray) -> Throughput:
    return Throughput(label, window, len(lat), len(lat) / lat.sum(), 1e3 * lat.mean(),
                      1e3 * float(np.percentile(lat, 95)))


def _run_mean(frames: np.ndarray, window: int, n: int) -> np.ndarray:
    w = FrameWindow(window)
    for i in range(window):
        w.push(frames[i % len(frames)])
    lat = np.empty(n)
    clock = time.perf_counter
    for i in range(n):
        f = frames[i % len(frames)]
        t0 = clock()
        w.push(f)
        w.mean_frame()
        lat[i] = clock() - t0
    return lat


def mean_frame_throughput(window: int, frames: np.ndarray, n: int = 1000, repeats: int = 5
                          ) -> Throughput:
    """Best of ``repeats`` runs of ``n`` push+mean steps after a full warm-up window."""
    best = None
    for _ in range(repeats):
        lat = _run_mean(frames, window, n)
        if best is None or lat.sum() < best.sum():
            best = lat
    return _summarize("mean_frame", window, best)


def compare_windows(windows: list[int], frames: np.ndarray, n: int = 1000, repeats: int = 5
                    ) -> dict[int, Throughput]:
    """Interleave the window lengths across repeats so drift hits them equally."""
    best: dict[int, np.ndarray] = {}
    for _ in range(repeats):
        for w in windows:
            lat = _run_mean(frames, w, n)
            if w not in best or lat.sum() < best[w].sum():
                best[w] = lat
    return {w: _summarize("mean_frame", w, best[w]) for w in windows}


def pipeline_throughput(model: Classifier, window: int, frames: np.ndarray, n: int = 1000
                        ) -> Throughput:
    w = FrameWindow(window)
    for i in range(window):
        w.push(frames[i % len(frames)])
    predict_at(w, model)
    lat = np.empty(n)
    clock = time.perf_counter
    for i in range(n):
        f = frames[i % len(frames)]
        t0 = clock()
        w.push(f)
        predict_at(w, model)
        lat[i] = clock() - t0
    return _summarize("pipeline", window, lat)
