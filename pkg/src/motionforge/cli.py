"""``motionforge <synth|train|infer|eval|bench>`` command-line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from motionforge import bench as benchmod
from motionforge.classifier import (
    CheckpointError,
    ModelArchitecture,
    ModelError,
    format_log,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)
from motionforge.config import ConfigError, ToolkitConfig, load_config, override
from motionforge.dataset import (
    DatasetError,
    Manifest,
    generate_dataset,
    ingest_assets,
    split,
)
from motionforge.evaluation import (
    EvaluationError,
    ModelDetector,
    OracleDetector,
    format_report,
    format_sweep,
    frame_level_eval,
    interval_sweep,
    load_corpus,
    report_record,
    video_level_eval,
)
from motionforge.imaging import ImagingError, write_image
from motionforge.streaming import (
    Classifier,
    StreamError,
    WindowConfig,
    iter_detections,
    list_frames,
    read_frames,
)
from motionforge.synthesis import ACTIONS, SynthesisError, contact_sheet, synthesize_frames

log = logging.getLogger("motionforge")

EXPECTED_ERRORS = (ConfigError, DatasetError, ModelError, EvaluationError, StreamError,
                   SynthesisError, ImagingError, OSError)


class CommandError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _require_dir(path: str | None, what: str) -> Path:
    if not path:
        raise CommandError(f"no {what} given (flag or [paths] config)")
    p = Path(path)
    if not p.is_dir():
        raise CommandError(f"{what} not found: {p}")
    return p


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise CommandError(f"no {what} given (flag or [paths] config)")
    p = Path(path)
    if not p.is_file():
        raise CommandError(f"{what} not found: {p}")
    return p


def _window_config(cfg: ToolkitConfig, args) -> WindowConfig:
    s = override(cfg.streaming, window=args.window, stride=args.stride,
                 interval=args.interval, fps=args.fps)
    return s.window_config()


def _load_model(path: str | None) -> Classifier:
    ckpt = _require_file(path, "checkpoint")
    params, arch = load_checkpoint(ckpt)
    return Classifier(params, arch)


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: ToolkitConfig, args) -> int:
    paths = override(cfg.paths, persons=args.persons, backgrounds=args.backgrounds, dataset=args.out)
    syn = override(cfg.synthesis, per_class=args.per_class, seed=args.seed, preset=args.preset,
                   n_steps=args.n_steps, workers=args.workers)
    persons_dir = _require_dir(paths.persons, "person asset directory")
    backgrounds_dir = _require_dir(paths.backgrounds, "background asset directory")
    if not paths.dataset:
        raise CommandError("no output directory given (--out or [paths] dataset)")
    settings = syn.blend_settings()
    persons, backgrounds = ingest_assets(persons_dir, backgrounds_dir)
    out = Path(paths.dataset)
    manifest = generate_dataset(persons, backgrounds, settings, cfg.jitter, syn.per_class,
                                syn.seed, out, workers=syn.workers)
    if args.preview:
        prev = out / "preview"
        prev.mkdir(exist_ok=True)
        for i in range(args.preview):
            a = i % len(ACTIONS)
            rec = manifest.records[a * syn.per_class + (i // len(ACTIONS)) % syn.per_class]
            person = next(p for p in persons if p.id == rec.person_id)
            bg = next(b for b in backgrounds if b.id == rec.background_id)
            frames = synthesize_frames(person.image, person.mask, bg.image, rec.action,
                                       settings, cfg.jitter, rec.seed)
            write_image(prev / f"{i:03d}_{rec.action.value}.png", contact_sheet(frames))
    print(f"wrote {len(manifest)} samples to {out}")
    for action, n in manifest.counts().items():
        print(f"  {action.value:<11} {n}")
    return 0


def cmd_train(cfg: ToolkitConfig, args) -> int:
    paths = override(cfg.paths, dataset=args.dataset, checkpoint=args.checkpoint)
    tr = override(cfg.training, epochs=args.epochs, seed=args.seed, batch_size=args.batch_size,
                  lr=args.lr, weight_decay=args.weight_decay, input_size=args.input_size,
                  val_fraction=args.val_fraction)
    dataset = _require_dir(paths.dataset, "dataset directory")
    if not paths.checkpoint:
        raise CommandError("no checkpoint path given (--checkpoint or [paths] checkpoint)")
    manifest = Manifest.read(dataset)
    if len(manifest) == 0:
        raise CommandError(f"dataset {dataset} is empty")
    manifest.check_files()
    train_m, val_m = split(manifest, tr.val_fraction, tr.seed)
    arch = ModelArchitecture(input_size=tr.input_size, widths=tr.widths)
    ckpt = Path(paths.checkpoint)
    log_path = Path(args.log) if args.log else ckpt.with_suffix(".log.jsonl")
    ckpt.parent.mkdir(parents=True, exist_ok=True)

    def progress(row):
        if not args.quiet:
            print(json.dumps(row, sort_keys=True), file=sys.stderr)

    params, history = train(train_m, val_m, arch, tr.train_config(), on_epoch=progress)
    save_checkpoint(params, arch, ckpt)
    log_path.write_text(format_log(history), encoding="utf-8")
    best = max((r.get("val_acc", float("nan")) for r in history), default=float("nan"))
    print(f"checkpoint: {ckpt}")
    print(f"training log: {log_path}")
    print(f"best validation accuracy: {best:.4f}" if history else "no epochs run")
    return 0


def cmd_infer(cfg: ToolkitConfig, args) -> int:
    model = _load_model(args.checkpoint or cfg.paths.checkpoint)
    wcfg = _window_config(cfg, args)
    frames_dir = Path(args.video_dir)
    n = len(list_frames(frames_dir))
    save = Path(args.save_mean_frames) if args.save_mean_frames else None
    if save:
        save.mkdir(parents=True, exist_ok=True)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    count = 0
    try:
        for det in iter_detections(read_frames(frames_dir), model, wcfg, keep_frames=bool(save)):
            out.write(det.to_record() + "\n")
            if save:
                write_image(save / f"mean_{det.frame_index:06d}.png", det.mean_frame)
            count += 1
    finally:
        if out is not sys.stdout:
            out.close()
    if count == 0:
        log.warning("%s: %d frames is too short for one window of %d (stride %d); no detections",
                    frames_dir, n, wcfg.window, wcfg.stride)
    return 0


def cmd_eval(cfg: ToolkitConfig, args) -> int:
    ev = override(cfg.evaluation, protocol=args.protocol, ground_truth=args.ground_truth,
                  sweep=args.sweep)
    if ev.protocol not in ("video", "frame"):
        raise CommandError(f"unknown protocol {ev.protocol!r} (video or frame)")
    videos = load_corpus(args.corpus_dir, ev.ground_truth)
    if args.oracle:
        detector = OracleDetector()
    else:
        detector = ModelDetector(_load_model(args.checkpoint or cfg.paths.checkpoint))
    wcfg = _window_config(cfg, args)
    report_dir = Path(args.report or cfg.paths.reports or ".")
    report_dir.mkdir(parents=True, exist_ok=True)

    evaluate = video_level_eval if ev.protocol == "video" else frame_level_eval
    counts = evaluate(videos, detector, wcfg)
    text = format_report(counts, ev.protocol)
    records = [report_record(counts, ev.protocol, window=wcfg.window, interval=wcfg.interval)]
    if ev.sweep:
        rows = interval_sweep(videos, detector, ev.sweep, wcfg.fps)
        text += "\ninterval sweep (video level, fps=%g)\n" % wcfg.fps + format_sweep(rows)
        records += [report_record(r.counts, "sweep", seconds=r.seconds, frames=r.frames) for r in rows]
    (report_dir / "eval_report.txt").write_text(text, encoding="utf-8")
    (report_dir / "eval_report.jsonl").write_text("\n".join(records) + "\n", encoding="utf-8")
    print(text, end="")
    return 0


def cmd_bench(cfg: ToolkitConfig, args) -> int:
    if args.checkpoint or cfg.paths.checkpoint:
        model = _load_model(args.checkpoint or cfg.paths.checkpoint)
    else:
        arch = ModelArchitecture(input_size=cfg.training.input_size, widths=cfg.training.widths)
        model = Classifier(init_params(arch, seed=0), arch)
    frames = benchmod.synthetic_stream(64, args.size, seed=0)
    windows = list(args.windows)
    mean_rows = benchmod.compare_windows(windows, frames, n=args.frames, repeats=args.repeats)
    pipe = benchmod.pipeline_throughput(model, windows[0], frames, n=args.frames)
    rows = [pipe.as_dict()] + [mean_rows[w].as_dict() for w in windows]
    for r in rows:
        print(json.dumps(r, sort_keys=True))
    if len(windows) >= 2:
        lo, hi = mean_rows[windows[0]].fps, mean_rows[windows[-1]].fps
        print(json.dumps({"mean_frame_fps_ratio": round(hi / lo, 4),
                          "windows": [windows[0], windows[-1]]}))
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motionforge",
        description="Synthesize motion images, train a compact classifier, detect falls in frame sequences.")
    parser.add_argument("--config", help="INI config file (default: $MOTIONFORGE_CONFIG)")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic training set")
    p.add_argument("--persons", help="person asset directory")
    p.add_argument("--backgrounds", help="background asset directory")
    p.add_argument("--out", help="dataset output directory")
    p.add_argument("--per-class", type=int, help="samples per action")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--preset", help="blend preset (urfd-like, aihub-like)")
    p.add_argument("--n-steps", type=int, help="poses per motion")
    p.add_argument("--workers", type=int, help="parallel render processes")
    p.add_argument("--preview", type=int, default=0, metavar="N",
                   help="also write N contact sheets (poses and their mean) to OUT/preview")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the classifier on a synthetic dataset")
    p.add_argument("--dataset", help="dataset directory holding manifest.tsv")
    p.add_argument("--checkpoint", help="checkpoint output path")
    p.add_argument("--log", help="training log path (default: CHECKPOINT with .log.jsonl)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--input-size", type=int)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--quiet", action="store_true", help="no per-epoch progress on stderr")
    p.set_defaults(func=cmd_train)

    def window_flags(q):
        q.add_argument("--window", type=int, help="frames averaged per detection (N)")
        q.add_argument("--stride", type=int, help="frame stride k")
        q.add_argument("--interval", type=int, help="frames between detections")
        q.add_argument("--fps", type=float, help="frame rate for second/frame conversion")

    p = sub.add_parser("infer", help="run mean-frame detection over a frame directory")
    p.add_argument("video_dir", help="directory of PNG frames in lexicographic order")
    p.add_argument("--checkpoint")
    p.add_argument("--out", help="detection records file (default: stdout)")
    p.add_argument("--save-mean-frames", metavar="DIR", help="write each window's mean frame")
    window_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a labelled corpus")
    p.add_argument("corpus_dir", help="directory of <video id>/ frame directories")
    p.add_argument("--checkpoint")
    p.add_argument("--protocol", choices=["video", "frame"])
    p.add_argument("--ground-truth", help="ground-truth file (default: CORPUS/ground_truth.txt)")
    p.add_argument("--sweep", type=_floats, help="comma-separated window lengths in seconds")
    p.add_argument("--oracle", action="store_true", help="answer from ground truth (protocol test hook)")
    p.add_argument("--report", help="report directory (default: [paths] reports or .)")
    window_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure streaming throughput")
    p.add_argument("--checkpoint", help="model to time (default: random init)")
    p.add_argument("--frames", type=int, default=1000, help="timed frames per run")
    p.add_argument("--size", type=int, default=64, help="synthetic frame side length")
    p.add_argument("--windows", type=_ints, default=(5, 50), help="window lengths to compare")
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(cfg, args)
    except (CommandError, CheckpointError, *EXPECTED_ERRORS) as exc:
        print(f"motionforge {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
