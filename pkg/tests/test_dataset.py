import logging
import shutil
from pathlib import Path

import numpy as np
import pytest

from motionforge.dataset import (
    DatasetError,
    Manifest,
    Record,
    generate_dataset,
    ingest_assets,
    load_batch,
    split,
    to_tensor,
)
from motionforge.imaging import read_image, write_image, write_mask
from motionforge.synthesis import ACTIONS, ActionKind, BlendSettings, JitterConfig


def _pair(d: Path, pid: str, rng, shape=(20, 10), nested=True, mask=None):
    img = rng.integers(0, 256, size=(*shape, 3), dtype=np.uint8)
    if mask is None:
        mask = np.zeros(shape, np.uint8)
        mask[2:-2, 2:-2] = 255
    if nested:
        (d / pid).mkdir(parents=True)
        write_image(d / pid / "image.png", img)
        write_mask(d / pid / "mask.png", mask)
    else:
        write_image(d / f"{pid}.png", img)
        write_mask(d / f"{pid}_mask.png", mask)


def _bg(d: Path, name: str, rng):
    d.mkdir(parents=True, exist_ok=True)
    write_image(d / f"{name}.png", rng.integers(0, 256, size=(40, 50, 3), dtype=np.uint8))


def test_ingest_three_pairs(tmp_path, rng):
    for i in range(3):
        _pair(tmp_path / "p", f"p{i}", rng)
    _bg(tmp_path / "b", "b0", rng)
    persons, bgs = ingest_assets(tmp_path / "p", tmp_path / "b")
    assert [p.id for p in persons] == ["p0", "p1", "p2"]
    assert len(bgs) == 1


def test_ingest_skips_mask_mismatch(tmp_path, rng, caplog):
    _pair(tmp_path / "p", "good", rng)
    _pair(tmp_path / "p", "bad", rng, mask=np.full((5, 5), 255, np.uint8))
    _bg(tmp_path / "b", "b0", rng)
    with caplog.at_level(logging.WARNING, logger="motionforge"):
        persons, _ = ingest_assets(tmp_path / "p", tmp_path / "b")
    assert [p.id for p in persons] == ["good"]
    assert "bad" in caplog.text


def _scan_oracle(person_dir: Path) -> int:
    """Count pairs that exist, decode, agree in size and have a nonempty mask."""
    from PIL import Image

    n = 0
    candidates = []
    for e in person_dir.iterdir():
        if e.is_dir():
            candidates.append((e / "image.png", e / "mask.png"))
        elif e.name.endswith(".png") and not e.name.endswith("_mask.png"):
            candidates.append((e, e.parent / (e.name[:-4] + "_mask.png")))
    for img, mask in candidates:
        try:
            a = Image.open(img)
            b = Image.open(mask)
            a.load()
            b.load()
        except OSError:
            continue
        if a.size != b.size:
            continue
        if np.asarray(b.convert("L")).max() < 128:
            continue
        n += 1
    return n


def test_ingest_mixed_corpus_matches_scan_oracle(tmp_path, rng):
    p = tmp_path / "p"
    for i in range(4):
        _pair(p, f"n{i}", rng)
    for i in range(3):
        _pair(p, f"f{i}", rng, nested=False)
    _pair(p, "mismatch", rng, mask=np.full((3, 3), 255, np.uint8))
    _pair(p, "empty", rng, mask=np.zeros((20, 10), np.uint8))
    _pair(p, "faint", rng, mask=np.full((20, 10), 100, np.uint8))
    (p / "garbage").mkdir()
    (p / "garbage" / "image.png").write_bytes(b"not a png")
    (p / "garbage" / "mask.png").write_bytes(b"")
    _pair(p, "nomask", rng, nested=False)
    (p / "nomask_mask.png").unlink()
    _bg(tmp_path / "b", "b0", rng)
    persons, _ = ingest_assets(p, tmp_path / "b")
    assert len(persons) == _scan_oracle(p) == 7


def test_ingest_empty_dirs(tmp_path):
    (tmp_path / "p").mkdir()
    (tmp_path / "b").mkdir()
    with pytest.raises(DatasetError):
        ingest_assets(tmp_path / "p", tmp_path / "b")
    with pytest.raises(DatasetError):
        ingest_assets(tmp_path / "missing", tmp_path / "b")


@pytest.fixture(scope="module")
def small_dataset(toy_assets, tmp_path_factory):
    persons, bgs = toy_assets
    out = tmp_path_factory.mktemp("ds")
    return generate_dataset(persons, bgs, BlendSettings(), JitterConfig(), 5, 3, out)


def test_generate_counts(small_dataset):
    m = small_dataset
    assert len(m) == 20
    assert all(v == 5 for v in m.counts().values())
    assert len(list((m.root / "samples").rglob("*.png"))) == 20
    m.check_files()


def test_generate_byte_identical(toy_assets, small_dataset, tmp_path):
    persons, bgs = toy_assets
    again = generate_dataset(persons, bgs, BlendSettings(), JitterConfig(), 5, 3, tmp_path)
    a = (small_dataset.root / "manifest.tsv").read_bytes()
    assert a == (tmp_path / "manifest.tsv").read_bytes()
    for r in again.records:
        assert (tmp_path / r.path).read_bytes() == (small_dataset.root / r.path).read_bytes()


def test_generate_parallel_matches_serial(toy_assets, small_dataset, tmp_path):
    persons, bgs = toy_assets
    generate_dataset(persons, bgs, BlendSettings(), JitterConfig(), 5, 3, tmp_path, workers=2)
    assert (tmp_path / "manifest.tsv").read_bytes() == (small_dataset.root / "manifest.tsv").read_bytes()
    for r in small_dataset.records:
        assert (tmp_path / r.path).read_bytes() == (small_dataset.root / r.path).read_bytes()


def test_generate_preconditions(toy_assets, tmp_path):
    persons, bgs = toy_assets
    with pytest.raises(DatasetError):
        generate_dataset(persons, bgs, BlendSettings(), JitterConfig(), 0, 0, tmp_path)
    with pytest.raises(DatasetError):
        generate_dataset([], bgs, BlendSettings(), JitterConfig(), 1, 0, tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(DatasetError):
        generate_dataset(persons, bgs, BlendSettings(), JitterConfig(), 1, 0, blocker / "out")


def test_manifest_round_trip_and_format(small_dataset):
    text = (small_dataset.root / "manifest.tsv").read_bytes()
    assert b"\r" not in text
    first, header = text.decode().split("\n")[:2]
    assert first == "#motionforge-manifest\t1"
    assert header.split("\t")[0] == "path"
    again = Manifest.read(small_dataset.root)
    assert again.records == small_dataset.records


def test_manifest_errors_name_line(small_dataset, tmp_path):
    lines = (small_dataset.root / "manifest.tsv").read_text().split("\n")
    lines[4] = lines[4].replace("\tfalling\t", "\tjumping\t")
    (tmp_path / "manifest.tsv").write_text("\n".join(lines))
    with pytest.raises(DatasetError, match="line 5"):
        Manifest.read(tmp_path)
    (tmp_path / "manifest.tsv").write_text("hello\n")
    with pytest.raises(DatasetError, match="line 1"):
        Manifest.read(tmp_path)


def test_manifest_detects_orphans_and_missing(small_dataset, tmp_path):
    root = tmp_path / "copy"
    shutil.copytree(small_dataset.root, root)
    m = Manifest.read(root)
    m.check_files()
    extra = root / "samples" / "walking" / "999999.png"
    shutil.copy(root / m.records[0].path, extra)
    with pytest.raises(DatasetError, match="orphan"):
        m.check_files()
    extra.unlink()
    (root / m.records[3].path).unlink()
    with pytest.raises(DatasetError, match="missing"):
        m.check_files()


def test_split_twenty_quarter(small_dataset):
    train, val = split(small_dataset, 0.25, 0)
    assert (len(train), len(val)) == (15, 5)
    assert set(val.labels().tolist()) == {0, 1, 2, 3}
    assert sorted(train.records + val.records, key=lambda r: r.path) == \
        sorted(small_dataset.records, key=lambda r: r.path)
    assert not set(train.records) & set(val.records)
    again = split(small_dataset, 0.25, 0)
    assert again[0].records == train.records and again[1].records == val.records


@pytest.mark.parametrize("frac", [0.1, 0.2, 0.33, 0.5, 0.9])
def test_split_stratification_error_within_one(small_dataset, frac):
    train, val = split(small_dataset, frac, 7)
    assert len(val) == int(np.floor(20 * frac + 0.5))
    for a in ACTIONS:
        assert abs(int(np.sum(val.labels() == a.index)) - 5 * frac) <= 1


def test_split_bad_fraction(small_dataset):
    for f in (0.0, 1.0, -0.2):
        with pytest.raises(DatasetError):
            split(small_dataset, f, 0)


def test_load_batch_exact_normalization(tmp_path, rng):
    img = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    write_image(tmp_path / "x.png", img)
    m = Manifest(tmp_path, [Record("x.png", 2, ActionKind.STANDING, "p", "b", 0, "h")])
    x, y = load_batch(m, [0], 16)
    assert x.shape == (1, 3, 16, 16) and x.dtype == np.float32
    assert np.array_equal(x[0], (img / 255.0).astype(np.float32).transpose(2, 0, 1))
    assert y.tolist() == [2]


def test_label_bijection():
    assert [ActionKind.from_index(i).index for i in range(4)] == [0, 1, 2, 3]
    assert [a.index for a in ACTIONS] == [0, 1, 2, 3]


@pytest.mark.parametrize("shape", [(96, 128), (40, 30), (17, 64), (64, 64)])
def test_resize_matches_cv2_within_one_level(rng, shape):
    cv2 = pytest.importorskip("cv2")
    img = rng.integers(0, 256, size=(*shape, 3), dtype=np.uint8)
    ours = to_tensor(img, 64).transpose(1, 2, 0)
    ref = cv2.resize(img.astype(np.float32), (64, 64), interpolation=cv2.INTER_LINEAR) / 255.0
    assert np.max(np.abs(ours - ref)) <= 1 / 255 + 1e-6


def test_load_batch_missing_file_names_record(small_dataset, tmp_path):
    root = tmp_path / "copy"
    shutil.copytree(small_dataset.root, root)
    m = Manifest.read(root)
    (root / m.records[6].path).unlink()
    with pytest.raises(DatasetError, match=m.records[6].path):
        load_batch(m, [5, 6], 32)


def test_generated_samples_decode(small_dataset):
    r = small_dataset.records[0]
    img = read_image(small_dataset.root / r.path)
    assert img.shape == (96, 128, 3)
