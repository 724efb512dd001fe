"""Asset ingestion, on-disk dataset generation, manifests, splits and batches.

Person assets are either ``<id>/image.png`` + ``<id>/mask.png`` directories or
flat ``<id>.png`` / ``<id>_mask.png`` pairs. Backgrounds are any ``*.png`` in
the background directory (id = file stem).

A generated dataset is laid out as::

    out_dir/
      manifest.tsv
      samples/<action>/<index:06d>.png

``manifest.tsv`` is UTF-8 with LF line endings. Line 1 is
``#motionforge-manifest<TAB>1``, line 2 holds the column names, and every
further line is one tab-separated record.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from motionforge.imaging import (
    ImagingError,
    read_image,
    read_mask,
    resize_bilinear,
    write_image,
)
from motionforge.synthesis import (
    ACTIONS,
    ActionKind,
    BlendSettings,
    JitterConfig,
    sample_seed,
    synthesize_sample,
)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"
MANIFEST_MAGIC = "#motionforge-manifest"
MANIFEST_VERSION = 1
COLUMNS = ("path", "label", "action", "person_id", "background_id", "seed", "settings_hash")


class DatasetError(ValueError):
    pass


@dataclass
class PersonAsset:
    id: str
    image_path: Path
    mask_path: Path
    image: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)


@dataclass
class BackgroundAsset:
    id: str
    image_path: Path
    image: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class Record:
    path: str
    label: int
    action: ActionKind
    person_id: str
    background_id: str
    seed: int
    settings_hash: str

    def to_line(self) -> str:
        return "\t".join([self.path, str(self.label), self.action.value, self.person_id,
                          self.background_id, str(self.seed), self.settings_hash])


@dataclass
class Manifest:
    root: Path
    records: list[Record]
    version: int = MANIFEST_VERSION

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def counts(self) -> dict[ActionKind, int]:
        out = {a: 0 for a in ACTIONS}
        for r in self.records:
            out[r.action] += 1
        return out

    def subset(self, indices: Iterable[int]) -> "Manifest":
        return Manifest(self.root, [self.records[i] for i in indices], self.version)

    def write(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path is not None else self.root / MANIFEST_NAME
        lines = [f"{MANIFEST_MAGIC}\t{self.version}", "\t".join(COLUMNS)]
        lines += [r.to_line() for r in self.records]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        return path

    @classmethod
    def read(cls, path: str | Path) -> "Manifest":
        """Parse a manifest file (or a dataset directory holding one)."""
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.is_file():
            raise DatasetError(f"manifest not found: {path}")
        with open(path, encoding="utf-8", newline="") as fh:
            lines = fh.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if len(lines) < 2:
            raise DatasetError(f"{path}: line 1: truncated manifest")
        head = lines[0].split("\t")
        if head[0] != MANIFEST_MAGIC or len(head) != 2:
            raise DatasetError(f"{path}: line 1: not a motionforge manifest")
        if head[1] != str(MANIFEST_VERSION):
            raise DatasetError(f"{path}: line 1: unsupported manifest version {head[1]}")
        if tuple(lines[1].split("\t")) != COLUMNS:
            raise DatasetError(f"{path}: line 2: unexpected column header")
        records = []
        for lineno, line in enumerate(lines[2:], start=3):
            parts = line.split("\t")
            try:
                if len(parts) != len(COLUMNS):
                    raise ValueError(f"expected {len(COLUMNS)} fields, got {len(parts)}")
                action = ActionKind(parts[2])
                label = int(parts[1])
                if label != action.index:
                    raise ValueError(f"label {label} does not match action {action.value}")
                records.append(Record(parts[0], label, action, parts[3], parts[4],
                                      int(parts[5]), parts[6]))
            except ValueError as exc:
                raise DatasetError(f"{path}: line {lineno}: {exc}") from None
        return cls(path.parent, records, MANIFEST_VERSION)

    def check_files(self) -> None:
        """Every record's file exists and no sample file is orphaned."""
        listed = {r.path for r in self.records}
        missing = [p for p in sorted(listed) if not (self.root / p).is_file()]
        if missing:
            raise DatasetError(f"missing sample files: {missing[:5]}")
        samples = self.root / "samples"
        if samples.is_dir():
            on_disk = {p.relative_to(self.root).as_posix() for p in samples.rglob("*.png")}
            orphans = sorted(on_disk - listed)
            if orphans:
                raise DatasetError(f"orphan sample files: {orphans[:5]}")


# ---------------------------------------------------------------- ingestion

def _person_pairs(person_dir: Path) -> list[tuple[str, Path, Path]]:
    pairs = []
    for entry in sorted(person_dir.iterdir()):
        if entry.is_dir():
            pairs.append((entry.name, entry / "image.png", entry / "mask.png"))
        elif entry.suffix.lower() == ".png" and not entry.stem.endswith("_mask"):
            pairs.append((entry.stem, entry, entry.with_name(entry.stem + "_mask.png")))
    return pairs


def ingest_assets(person_dir: str | Path, background_dir: str | Path
                  ) -> tuple[list[PersonAsset], list[BackgroundAsset]]:
    """Load and validate person/mask pairs and backgrounds. Bad pairs are skipped with a warning."""
    person_dir, background_dir = Path(person_dir), Path(background_dir)
    for d in (person_dir, background_dir):
        if not d.is_dir():
            raise DatasetError(f"asset directory not found: {d}")

    persons = []
    for pid, img_path, mask_path in _person_pairs(person_dir):
        try:
            image = read_image(img_path)
            mask = read_mask(mask_path)
        except (OSError, ImagingError) as exc:
            log.warning("skipping person %s: unreadable (%s)", pid, exc)
            continue
        if mask.shape != image.shape[:2]:
            log.warning("skipping person %s: mask %s does not match image %s",
                        pid, mask.shape, image.shape[:2])
            continue
        if not mask.any():
            log.warning("skipping person %s: empty mask", pid)
            continue
        persons.append(PersonAsset(pid, img_path, mask_path, image, mask))

    backgrounds = []
    for p in sorted(background_dir.glob("*.png")):
        try:
            backgrounds.append(BackgroundAsset(p.stem, p, read_image(p)))
        except (OSError, ImagingError) as exc:
            log.warning("skipping background %s: unreadable (%s)", p.name, exc)

    if not persons:
        raise DatasetError(f"no valid person assets in {person_dir}")
    if not backgrounds:
        raise DatasetError(f"no valid background assets in {background_dir}")
    return persons, backgrounds


# ---------------------------------------------------------------- generation

def plan_samples(n_persons: int, n_backgrounds: int, per_class_count: int, global_seed: int
                 ) -> list[tuple[int, ActionKind, int, int, int]]:
    """``(index, action, person_idx, background_idx, seed)`` for every sample, class-major order."""
    rng = np.random.default_rng(global_seed)
    n = per_class_count * len(ACTIONS)
    person_idx = rng.integers(0, n_persons, size=n)
    bg_idx = rng.integers(0, n_backgrounds, size=n)
    plan = []
    for i in range(n):
        action = ACTIONS[i // per_class_count]
        plan.append((i, action, int(person_idx[i]), int(bg_idx[i]), sample_seed(global_seed, i)))
    return plan


def _render_one(args):
    person, background, action, settings, cfg, seed, out_path = args
    sample = synthesize_sample(person, background, action, settings, cfg, seed)
    write_image(out_path, sample.image)
    return sample.settings_hash


def generate_dataset(persons: Sequence[PersonAsset], backgrounds: Sequence[BackgroundAsset],
                     settings: BlendSettings, cfg: JitterConfig, per_class_count: int,
                     global_seed: int, out_dir: str | Path, workers: int = 1) -> Manifest:
    """Write ``per_class_count`` samples of each action plus ``manifest.tsv`` to ``out_dir``."""
    if per_class_count < 1:
        raise DatasetError("per_class_count must be >= 1")
    if not persons or not backgrounds:
        raise DatasetError("need at least one person and one background asset")
    out_dir = Path(out_dir)
    try:
        for a in ACTIONS:
            (out_dir / "samples" / a.value).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot write to {out_dir}: {exc}") from None
    # stale samples from an earlier, larger run would become orphans
    for stale in (out_dir / "samples").rglob("*.png"):
        stale.unlink()

    plan = plan_samples(len(persons), len(backgrounds), per_class_count, global_seed)
    jobs, records = [], []
    for i, action, pi, bi, seed in plan:
        rel = f"samples/{action.value}/{i:06d}.png"
        jobs.append((persons[pi], backgrounds[bi], action, settings, cfg, seed, out_dir / rel))
        records.append((rel, action, persons[pi].id, backgrounds[bi].id, seed))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            hashes = list(pool.map(_render_one, jobs, chunksize=8))
    else:
        hashes = [_render_one(j) for j in jobs]

    manifest = Manifest(out_dir, [
        Record(rel, action.index, action, pid, bid, seed, h)
        for (rel, action, pid, bid, seed), h in zip(records, hashes)
    ])
    manifest.write()
    return manifest


# ---------------------------------------------------------------- splits and batches

def split(manifest: Manifest, val_fraction: float, seed: int) -> tuple[Manifest, Manifest]:
    """Stratified train/validation split.

    The validation size is ``round(len * val_fraction)``, shared out across
    labels by largest remainder (ties broken by a seeded shuffle), so each
    class is within one sample of its exact proportional share.
    """
    if not 0.0 < val_fraction < 1.0:
        raise DatasetError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    by_label: dict[int, list[int]] = {}
    for i, r in enumerate(manifest.records):
        by_label.setdefault(r.label, []).append(i)
    labels = sorted(by_label)

    total_val = int(np.floor(len(manifest) * val_fraction + 0.5))
    exact = {lab: len(by_label[lab]) * val_fraction for lab in labels}
    take = {lab: int(np.floor(exact[lab])) for lab in labels}
    leftover = total_val - sum(take.values())
    tiebreak = rng.permutation(len(labels))
    order = sorted(range(len(labels)),
                   key=lambda j: (-(exact[labels[j]] - take[labels[j]]), tiebreak[j]))
    for j in order[:max(leftover, 0)]:
        take[labels[j]] += 1

    train_idx, val_idx = [], []
    for lab in labels:
        members = np.array(by_label[lab])
        members = members[rng.permutation(len(members))]
        k = min(take[lab], len(members))
        val_idx.extend(sorted(members[:k].tolist()))
        train_idx.extend(sorted(members[k:].tolist()))
    return manifest.subset(sorted(train_idx)), manifest.subset(sorted(val_idx))


def to_tensor(img: np.ndarray, target_size: int) -> np.ndarray:
    """uint8 ``(H, W, 3)`` -> float32 ``(3, S, S)`` in [0, 1], bilinear resize."""
    resized = resize_bilinear(img, target_size, target_size)
    if img.shape[:2] != (target_size, target_size):
        resized = np.clip(np.floor(resized + 0.5), 0, 255)
    return (resized / 255.0).astype(np.float32).transpose(2, 0, 1)


def load_batch(manifest: Manifest, indices: Sequence[int], target_size: int
               ) -> tuple[np.ndarray, np.ndarray]:
    """Images as float32 ``(B, 3, S, S)`` in [0, 1] plus int64 class indices."""
    xs = np.empty((len(indices), 3, target_size, target_size), dtype=np.float32)
    ys = np.empty(len(indices), dtype=np.int64)
    for j, i in enumerate(indices):
        rec = manifest.records[i]
        path = manifest.root / rec.path
        try:
            img = read_image(path)
        except OSError:
            raise DatasetError(f"cannot read sample for record {i} ({rec.path})") from None
        xs[j] = to_tensor(img, target_size)
        ys[j] = rec.label
    return xs, ys


def dataset_exists(path: str | Path) -> bool:
    return os.path.isfile(Path(path) / MANIFEST_NAME)
