"""Fall-detection scoring: confusion counts, video-level and frame-level
protocols, and the detection-interval sweep.

Ground-truth files are line oriented; blank lines and ``#`` comments are
ignored. Each line is a video id followed by whitespace and either

* ``fall`` or ``adl`` (video-level truth), or
* comma-separated inclusive 1-based frame ranges ``start-end`` marking fall
  frames, or ``none`` for a video without fall frames.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from motionforge.streaming import (
    Classifier,
    Detection,
    WindowConfig,
    detect_over_video,
    list_frames,
    read_frames,
    seconds_to_frames,
)
from motionforge.synthesis import ACTIONS, ActionKind

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


def round2(x: float) -> float:
    return float(Decimal(repr(x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass
class ConfusionCounts:
    tp: int = 0
    fn: int = 0
    tn: int = 0
    fp: int = 0

    def __post_init__(self):
        if min(self.tp, self.fn, self.tn, self.fp) < 0:
            raise EvaluationError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    def add(self, truth: bool, predicted: bool) -> None:
        if truth:
            if predicted:
                self.tp += 1
            else:
                self.fn += 1
        elif predicted:
            self.fp += 1
        else:
            self.tn += 1

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fn + other.fn,
                               self.tn + other.tn, self.fp + other.fp)


@dataclass(frozen=True)
class Metrics:
    """Percentages rounded to two decimals; ``None`` where the denominator is zero."""

    sensitivity: float | None
    specificity: float | None
    precision: float | None
    accuracy: float | None

    def as_dict(self) -> dict[str, float | None]:
        return {"sensitivity": self.sensitivity, "specificity": self.specificity,
                "precision": self.precision, "accuracy": self.accuracy}


def _pct(num: int, den: int) -> float | None:
    return None if den == 0 else round2(100.0 * num / den)


def metrics(c: ConfusionCounts) -> Metrics:
    return Metrics(
        sensitivity=_pct(c.tp, c.tp + c.fn),
        specificity=_pct(c.tn, c.tn + c.fp),
        precision=_pct(c.tp, c.tp + c.fp),
        accuracy=_pct(c.tp + c.tn, c.total),
    )


# ---------------------------------------------------------------- corpora

@dataclass
class LabeledVideo:
    """A frame sequence with video-level truth (``fall``) and optionally per-frame truth.

    Frames come from ``frame_dir`` or, for in-memory use, ``frames``.
    ``fall_frames`` is a boolean array aligned with the frames.
    """

    id: str
    frame_dir: Path | None = None
    frames: Sequence[np.ndarray] | None = field(default=None, repr=False)
    fall: bool | None = None
    fall_frames: np.ndarray | None = field(default=None, repr=False)
    fall_ranges: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if self.fall_ranges is not None and self.fall_frames is None:
            self.fall_frames = ranges_to_flags(self.fall_ranges, self.n_frames)
        if self.fall_frames is not None:
            self.fall_frames = np.asarray(self.fall_frames, dtype=bool)
            if len(self.fall_frames) != self.n_frames:
                raise EvaluationError(
                    f"video {self.id}: {len(self.fall_frames)} frame labels for {self.n_frames} frames")
            if self.fall is None:
                self.fall = bool(self.fall_frames.any())
        if self.fall is None:
            raise EvaluationError(f"video {self.id}: no ground truth")

    @property
    def n_frames(self) -> int:
        if self.frames is not None:
            return len(self.frames)
        if self.frame_dir is not None:
            return len(list_frames(self.frame_dir))
        return 0

    def iter_frames(self) -> Iterable[np.ndarray]:
        if self.frames is not None:
            return iter(self.frames)
        if self.frame_dir is not None:
            return read_frames(self.frame_dir)
        return iter(())

    def fall_at(self, t: int) -> bool:
        if self.fall_frames is None:
            raise EvaluationError(f"video {self.id}: missing per-frame labels")
        return bool(self.fall_frames[t - 1])


def ranges_to_flags(ranges: Iterable[tuple[int, int]], n_frames: int) -> np.ndarray:
    flags = np.zeros(n_frames, dtype=bool)
    for start, end in ranges:
        if start < 1 or end < start:
            raise EvaluationError(f"bad frame range {start}-{end}")
        flags[start - 1:end] = True
    return flags


@dataclass(frozen=True)
class GroundTruth:
    fall: bool | None = None
    ranges: tuple[tuple[int, int], ...] | None = None


def parse_ground_truth(path: str | Path) -> dict[str, GroundTruth]:
    out: dict[str, GroundTruth] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise EvaluationError(f"{path}: line {lineno}: expected '<id> <label>'")
        vid, label = parts[0], parts[1].strip()
        if label in ("fall", "adl"):
            gt = GroundTruth(fall=label == "fall")
        elif label in ("none", "-"):
            gt = GroundTruth(ranges=())
        else:
            try:
                ranges = []
                for chunk in label.replace(" ", "").split(","):
                    a, b = chunk.split("-")
                    ranges.append((int(a), int(b)))
            except ValueError:
                raise EvaluationError(f"{path}: line {lineno}: bad label {label!r}") from None
            gt = GroundTruth(ranges=tuple(ranges))
        if vid in out:
            raise EvaluationError(f"{path}: line {lineno}: duplicate id {vid}")
        out[vid] = gt
    return out


def load_corpus(corpus_dir: str | Path, ground_truth: str | Path | None = None) -> list[LabeledVideo]:
    """Pair every ``corpus_dir/<id>/`` frame directory with its ground-truth line."""
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise EvaluationError(f"corpus directory not found: {corpus_dir}")
    gt_path = Path(ground_truth) if ground_truth else corpus_dir / "ground_truth.txt"
    if not gt_path.is_file():
        raise EvaluationError(f"ground-truth file not found: {gt_path}")
    truth = parse_ground_truth(gt_path)
    dirs = {d.name: d for d in sorted(corpus_dir.iterdir()) if d.is_dir()}
    if not dirs:
        raise EvaluationError(f"empty corpus: {corpus_dir}")
    unmatched = sorted(set(dirs) ^ set(truth))
    if unmatched:
        raise EvaluationError(f"ground truth and corpus disagree on ids: {', '.join(unmatched)}")
    return [LabeledVideo(vid, frame_dir=dirs[vid], fall=truth[vid].fall,
                         fall_ranges=truth[vid].ranges) for vid in sorted(dirs)]


# ---------------------------------------------------------------- detectors

class Detector(Protocol):
    def detect(self, video: LabeledVideo, cfg: WindowConfig) -> list[Detection]: ...


class ModelDetector:
    def __init__(self, model: Classifier):
        self.model = model

    def detect(self, video: LabeledVideo, cfg: WindowConfig) -> list[Detection]:
        return detect_over_video(video.iter_frames(), self.model, cfg)


class OracleDetector:
    """Answers from ground truth at the same instants a model would be queried."""

    def detect(self, video: LabeledVideo, cfg: WindowConfig) -> list[Detection]:
        out = []
        for t in cfg.detection_indices(video.n_frames):
            fall = video.fall_at(t) if video.fall_frames is not None else bool(video.fall)
            action = ActionKind.FALLING if fall else ActionKind.STANDING
            probs = tuple(1.0 if a is action else 0.0 for a in ACTIONS)
            out.append(Detection(t, action, probs))
        return out


# ---------------------------------------------------------------- protocols

def video_level_eval(videos: Sequence[LabeledVideo], detector: Detector, cfg: WindowConfig
                     ) -> ConfusionCounts:
    """A video counts as a fall iff any of its detections is a fall."""
    counts = ConfusionCounts()
    for video in videos:
        detections = detector.detect(video, cfg)
        if not detections:
            log.warning("video %s too short for one window (%d frames); predicted non-fall",
                        video.id, video.n_frames)
        counts.add(bool(video.fall), any(d.fall for d in detections))
    return counts


def frame_level_eval(videos: Sequence[LabeledVideo], detector: Detector, cfg: WindowConfig
                     ) -> ConfusionCounts:
    """Score every detection instant against the per-frame truth at that instant."""
    counts = ConfusionCounts()
    for video in videos:
        if video.fall_frames is None:
            raise EvaluationError(f"video {video.id}: missing per-frame labels")
        for d in detector.detect(video, cfg):
            counts.add(video.fall_at(d.frame_index), d.fall)
    return counts


@dataclass(frozen=True)
class SweepRow:
    seconds: float
    frames: int
    counts: ConfusionCounts
    accuracy: float | None


def interval_sweep(videos: Sequence[LabeledVideo], detector: Detector, intervals: Sequence[float],
                   fps: float) -> list[SweepRow]:
    """Video-level accuracy with N = round(seconds * fps) contiguous frames per window."""
    rows = []
    for seconds in intervals:
        if seconds <= 0:
            raise EvaluationError(f"interval must be positive, got {seconds}")
        n = max(1, seconds_to_frames(seconds, fps))
        cfg = WindowConfig(window=n, stride=1, interval=n, fps=fps)
        counts = video_level_eval(videos, detector, cfg)
        rows.append(SweepRow(seconds, n, counts, metrics(counts).accuracy))
    return rows


# ---------------------------------------------------------------- reports

def _fmt(v: float | None) -> str:
    return "undefined" if v is None else f"{v:.2f}"


def format_report(counts: ConfusionCounts, protocol: str) -> str:
    m = metrics(counts)
    lines = [f"protocol: {protocol}",
             f"tp={counts.tp} fn={counts.fn} tn={counts.tn} fp={counts.fp}",
             f"{'metric':<12} {'value':>10}"]
    for name, v in m.as_dict().items():
        lines.append(f"{name:<12} {_fmt(v):>10}")
    return "\n".join(lines) + "\n"


def report_record(counts: ConfusionCounts, protocol: str, **extra) -> str:
    row = {"protocol": protocol, "tp": counts.tp, "fn": counts.fn, "tn": counts.tn,
           "fp": counts.fp, **metrics(counts).as_dict(), **extra}
    return json.dumps(row, sort_keys=True)


def format_sweep(rows: Sequence[SweepRow]) -> str:
    lines = [f"{'seconds':>8} {'frames':>7} {'accuracy':>10}"]
    lines += [f"{r.seconds:>8.1f} {r.frames:>7d} {_fmt(r.accuracy):>10}" for r in rows]
    return "\n".join(lines) + "\n"
