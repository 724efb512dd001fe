"""End-to-end self test: synthesize, train, score held-out samples, detect rendered falls.

Everything runs through the CLI entry point so the check covers the same
code a user would run. Used by ``scripts/closed_loop.py`` and the
acceptance suite.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from motionforge.classifier import load_checkpoint, predict_proba
from motionforge.cli import main as cli_main
from motionforge.dataset import generate_dataset, ingest_assets, load_batch
from motionforge.imaging import write_image
from motionforge.synthesis import ActionKind, BlendSettings, JitterConfig, sample_seed, synthesize_frames
from motionforge.toy import write_toy_assets


@dataclass
class ClosedLoopResult:
    val_accuracy: float
    heldout_accuracy: float
    confusion: list[list[int]]
    fall_videos: int
    fall_flagged: int
    static_detections: int
    static_falls: int
    static_motionless: int
    empty_scene_falls: int
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def fall_rate(self) -> float:
        return self.fall_flagged / self.fall_videos if self.fall_videos else float("nan")

    def to_json(self) -> str:
        d = asdict(self)
        d["fall_rate"] = self.fall_rate
        return json.dumps(d, sort_keys=True, indent=2)


def write_frames(out_dir: Path, frames) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames, start=1):
        write_image(out_dir / f"{i:05d}.png", f)
    return out_dir


def fall_video(person, background, settings: BlendSettings, cfg: JitterConfig, seed: int,
               lead: int, tail: int) -> list[np.ndarray]:
    """A rendered fall padded with still frames of the first and last pose."""
    frames = synthesize_frames(person.image, person.mask, background.image, ActionKind.FALLING,
                               settings, cfg, seed)
    return [frames[0]] * lead + frames + [frames[-1]] * tail


def _infer(video_dir: Path, ckpt: Path, window: int, out: Path) -> list[dict]:
    code = cli_main(["infer", str(video_dir), "--checkpoint", str(ckpt), "--window", str(window),
                     "--interval", "1", "--out", str(out)])
    if code != 0:
        raise RuntimeError(f"infer failed on {video_dir}")
    return [json.loads(line) for line in out.read_text().splitlines()]


def run(workdir: str | Path, per_class: int = 200, epochs: int = 100, seed: int = 0,
        n_fall_videos: int = 20, heldout_per_class: int = 50, input_size: int = 64,
        n_persons: int = 24, n_backgrounds: int = 10) -> ClosedLoopResult:
    workdir = Path(workdir)
    timings = {}
    t0 = time.perf_counter()
    persons_dir, bgs_dir = write_toy_assets(workdir / "assets", n_persons=n_persons,
                                            n_backgrounds=n_backgrounds, seed=seed)
    data, ckpt = workdir / "data", workdir / "run" / "model.ckpt"
    if cli_main(["synth", "--persons", str(persons_dir), "--backgrounds", str(bgs_dir),
                 "--out", str(data), "--per-class", str(per_class), "--seed", str(seed)]) != 0:
        raise RuntimeError("synth failed")
    timings["synth"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if cli_main(["train", "--dataset", str(data), "--checkpoint", str(ckpt), "--epochs", str(epochs),
                 "--seed", str(seed), "--input-size", str(input_size), "--quiet"]) != 0:
        raise RuntimeError("train failed")
    timings["train"] = time.perf_counter() - t0
    history = [json.loads(line) for line in ckpt.with_suffix(".log.jsonl").read_text().splitlines()]
    val_acc = max(r["val_acc"] for r in history)

    # held-out samples from a disjoint seed, never seen in training or model selection
    t0 = time.perf_counter()
    persons, backgrounds = ingest_assets(persons_dir, bgs_dir)
    settings, jitter = BlendSettings(), JitterConfig()
    heldout = generate_dataset(persons, backgrounds, settings, jitter, heldout_per_class,
                               seed + 1_000_003, workdir / "heldout")
    params, arch = load_checkpoint(ckpt)
    x, y = load_batch(heldout, range(len(heldout)), arch.input_size)
    pred = predict_proba(params, x, arch).argmax(axis=1)
    confusion = np.zeros((4, 4), dtype=int)
    np.add.at(confusion, (y, pred), 1)
    heldout_acc = float(np.mean(pred == y))
    timings["heldout"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    n_steps = settings.n_steps
    rng = np.random.default_rng(seed + 7)
    flagged = 0
    for i in range(n_fall_videos):
        p = persons[int(rng.integers(len(persons)))]
        b = backgrounds[int(rng.integers(len(backgrounds)))]
        frames = fall_video(p, b, settings, jitter, sample_seed(seed + 2_000_003, i),
                            lead=n_steps // 2, tail=n_steps // 2)
        vdir = write_frames(workdir / "falls" / f"fall_{i:03d}", frames)
        dets = _infer(vdir, ckpt, n_steps, workdir / "falls" / f"fall_{i:03d}.jsonl")
        flagged += any(d["fall"] for d in dets)

    # still scenes (a person standing or lying, not moving): detections should be motionless
    static_dets, empty_dets = [], []
    for j in range(4):
        p = persons[int(rng.integers(len(persons)))]
        b = backgrounds[int(rng.integers(len(backgrounds)))]
        action = ActionKind.STANDING if j % 2 == 0 else ActionKind.LYING_DOWN
        still = synthesize_frames(p.image, p.mask, b.image, action, settings, jitter,
                                  sample_seed(seed + 3_000_017, j))[-1]
        vdir = write_frames(workdir / "static" / f"scene_{j}", [still] * (2 * n_steps))
        static_dets += _infer(vdir, ckpt, n_steps, workdir / "static" / f"scene_{j}.jsonl")
        vdir = write_frames(workdir / "static" / f"empty_{j}", [b.image] * n_steps)
        empty_dets += _infer(vdir, ckpt, n_steps, workdir / "static" / f"empty_{j}.jsonl")
    timings["infer"] = time.perf_counter() - t0

    motionless = {ActionKind.STANDING.value, ActionKind.LYING_DOWN.value}
    return ClosedLoopResult(
        val_accuracy=val_acc,
        heldout_accuracy=heldout_acc,
        confusion=confusion.tolist(),
        fall_videos=n_fall_videos,
        fall_flagged=flagged,
        static_detections=len(static_dets),
        static_falls=sum(d["fall"] for d in static_dets),
        static_motionless=sum(d["action"] in motionless for d in static_dets),
        empty_scene_falls=sum(d["fall"] for d in empty_dets),
        timings={k: round(v, 2) for k, v in timings.items()},
    )
