import math
import struct

import numpy as np
import pytest

from motionforge.classifier import (
    AdamWState,
    CheckpointError,
    ModelArchitecture,
    ModelError,
    TrainConfig,
    activation_pattern,
    backward,
    cross_entropy,
    fit,
    forward,
    init_params,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
    softmax,
)
from oracles import adamw_scalar, cnn_forward_oracle, finite_difference_grads, relative_error

SMALL = ModelArchitecture(input_size=16, widths=(4, 8, 8, 8))


def small_problem(seed, batch=3):
    rng = np.random.default_rng(seed)
    params = init_params(SMALL, seed=seed, dtype=np.float64)
    for k in params:
        if k.endswith("bias"):
            params[k] = rng.normal(0, 0.1, size=params[k].shape)
    x = rng.random((batch, 3, 16, 16))
    y = rng.integers(0, 4, size=batch)
    return params, x, y


def test_default_architecture():
    arch = ModelArchitecture()
    assert arch.shapes()["fc.weight"] == (4, 128)
    assert arch.n_params() == 97956 < 1_000_000


def test_bad_input_size():
    with pytest.raises(ModelError):
        ModelArchitecture(input_size=20)


def test_init_deterministic_and_bounded():
    a, b = init_params(ModelArchitecture(), 5), init_params(ModelArchitecture(), 5)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    w = a["conv1.weight"]
    assert np.abs(w).max() <= math.sqrt(6 / (16 * 9))
    assert not np.array_equal(a["conv0.weight"], init_params(ModelArchitecture(), 6)["conv0.weight"])


def test_forward_matches_oracle():
    params, x, _ = small_problem(0, batch=4)
    assert np.allclose(forward(params, x, SMALL), cnn_forward_oracle(params, x, 4), atol=1e-12)


def test_forward_without_standardization_matches_oracle():
    raw = ModelArchitecture(input_size=16, widths=(4, 8, 8, 8), standardize=False)
    params, x, _ = small_problem(2, batch=3)
    assert np.allclose(forward(params, x, raw), cnn_forward_oracle(params, x, 4, standardize=False),
                       atol=1e-12)


def test_standardization_ignores_channel_offsets():
    params, x, _ = small_problem(6, batch=2)
    shifted = x + np.array([0.1, -0.2, 0.05])[None, :, None, None]
    assert np.allclose(forward(params, shifted, SMALL), forward(params, x, SMALL), atol=1e-10)


def test_zero_head_gives_uniform():
    params = init_params(ModelArchitecture(), 0)
    params["fc.weight"][:] = 0
    x = np.random.default_rng(0).random((2, 3, 64, 64), dtype=np.float32)
    logits = forward(params, x, ModelArchitecture())
    assert np.all(logits == 0)
    assert np.allclose(softmax(logits), 0.25)


def test_batch_independence_and_permutation():
    params, x, _ = small_problem(1, batch=5)
    full = forward(params, x, SMALL)
    dup = forward(params, np.concatenate([x[:1], x[:1]]), SMALL)
    assert np.array_equal(dup[0], dup[1])
    perm = np.random.default_rng(2).permutation(5)
    assert np.allclose(forward(params, x[perm], SMALL), full[perm], rtol=0, atol=1e-12)


def test_forward_shape_mismatch():
    params, x, _ = small_problem(0)
    with pytest.raises(ModelError):
        forward(params, x[:, :, :8, :8], SMALL)


def test_cross_entropy_closed_forms():
    loss, grad = cross_entropy(np.zeros((3, 4)), np.array([0, 2, 3]))
    assert abs(loss - math.log(4)) < 1e-9
    assert np.allclose(grad.sum(axis=1), 0)
    logits = np.log(np.array([[0.7, 0.1, 0.1, 0.1]]))
    loss, _ = cross_entropy(logits, np.array([0]))
    assert abs(loss + math.log(0.7)) < 1e-9
    loss, _ = cross_entropy(np.array([[60.0, 0, 0, 0]]), np.array([0]))
    assert 0 <= loss < 1e-20


def test_cross_entropy_stable_and_validated():
    loss, grad = cross_entropy(np.array([[1000.0, 0, 0, -1000.0]]), np.array([3]))
    assert math.isfinite(loss) and np.all(np.isfinite(grad))
    with pytest.raises(ModelError):
        cross_entropy(np.array([[np.nan, 0, 0, 0]]), np.array([0]))
    with pytest.raises(ModelError):
        cross_entropy(np.zeros((1, 4)), np.array([4]))


def test_cross_entropy_gradient():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(5, 4))
    y = rng.integers(0, 4, 5)
    _, g = cross_entropy(z, y)
    onehot = np.eye(4)[y]
    assert np.allclose(g, (softmax(z) - onehot) / 5)


def test_label_permutation_invariance():
    params, x, y = small_problem(3, batch=6)
    perm = np.array([2, 0, 3, 1])
    p2 = dict(params)
    p2["fc.weight"] = np.empty_like(params["fc.weight"])
    p2["fc.bias"] = np.empty_like(params["fc.bias"])
    p2["fc.weight"][perm] = params["fc.weight"]
    p2["fc.bias"][perm] = params["fc.bias"]
    l1, _ = backward(params, x, y, SMALL)
    l2, _ = backward(p2, x, perm[y], SMALL)
    assert abs(l1 - l2) < 1e-12


def test_gradients_match_finite_differences():
    params, x, y = small_problem(10)
    _, grads = backward(params, x, y, SMALL)
    fd, shrunk = finite_difference_grads(
        lambda p: backward(p, x, y, SMALL)[0], params,
        pattern_fn=lambda p: activation_pattern(p, x, SMALL))
    worst = max(float(relative_error(grads[k], fd[k]).max()) for k in params)
    assert worst < 1e-4
    assert shrunk < 0.05 * sum(v.size for v in params.values())


def test_dead_path_gradient_is_zero():
    params, x, y = small_problem(4)
    # channel 2 of the last block feeds nothing once its head column is zero
    params["fc.weight"][:, 2] = 0
    _, grads = backward(params, x, y, SMALL)
    assert np.all(grads["conv3.weight"][2] == 0)
    assert grads["conv3.bias"][2] == 0


def test_sum_reduction_is_batch_times_mean():
    params, x, y = small_problem(5, batch=4)
    _, g = backward(params, x, y, SMALL)
    summed = {k: np.zeros_like(v) for k, v in params.items()}
    for i in range(4):
        _, gi = backward(params, x[i:i + 1], y[i:i + 1], SMALL)
        for k in summed:
            summed[k] += gi[k]
    for k in params:
        assert np.allclose(summed[k], 4 * g[k], rtol=1e-10, atol=1e-14)


def test_optimizer_fixed_point_and_decay():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    zero = {"w": np.zeros(3)}
    out, _ = optimizer_step(p, zero, AdamWState(), TrainConfig(weight_decay=0.0), 1)
    assert np.array_equal(out["w"], p["w"])
    out, _ = optimizer_step(p, zero, AdamWState(), TrainConfig(weight_decay=0.01, lr=0.001), 1)
    assert np.allclose(out["w"], p["w"] * (1 - 1e-5), rtol=0, atol=1e-15)


def test_optimizer_matches_scalar_trace():
    cfg = TrainConfig(lr=0.01, weight_decay=0.1)
    grads = [0.5, -1.25, 0.75]
    ref = adamw_scalar(2.0, grads, cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps)
    p, state = {"w": np.array([2.0])}, AdamWState()
    for t, g in enumerate(grads, start=1):
        p, state = optimizer_step(p, {"w": np.array([g])}, state, cfg, t)
        assert abs(p["w"][0] - ref[t - 1]) < 1e-12


def test_optimizer_rejects_step_zero():
    with pytest.raises(ModelError):
        optimizer_step({"w": np.zeros(1)}, {"w": np.zeros(1)}, AdamWState(), TrainConfig(), 0)


def _toy_images(n, seed):
    """Four trivially separable classes: a bright quadrant per label."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 4
    x = rng.random((n, 3, 16, 16)).astype(np.float32) * 0.3
    for i, lab in enumerate(y):
        r, c = divmod(int(lab), 2)
        x[i, :, r * 8:(r + 1) * 8, c * 8:(c + 1) * 8] += 0.7
    return x, y


def test_overfits_eight_samples():
    rng = np.random.default_rng(0)
    x = rng.random((8, 3, 16, 16)).astype(np.float32)
    y = np.array([0, 1, 2, 3, 0, 1, 2, 3])
    params, hist = fit(x, y, SMALL, TrainConfig(batch_size=8, epochs=200, seed=0), x, y)
    assert max(h["val_acc"] for h in hist) == 1.0
    assert np.mean(forward(params, x, SMALL).argmax(1) == y) == 1.0


def test_training_deterministic():
    x, y = _toy_images(24, 0)
    cfg = TrainConfig(batch_size=8, epochs=3, seed=9)
    a = fit(x, y, SMALL, cfg, x[:8], y[:8])
    b = fit(x, y, SMALL, cfg, x[:8], y[:8])
    assert a[1] == b[1]
    assert all(np.array_equal(a[0][k], b[0][k]) for k in a[0])
    assert all(math.isfinite(r["loss"]) for r in a[1])


def test_zero_epochs_returns_init():
    x, y = _toy_images(8, 0)
    cfg = TrainConfig(epochs=0, seed=4)
    params, hist = fit(x, y, SMALL, cfg)
    assert hist == []
    init = init_params(SMALL, seed=int(np.random.default_rng(4).integers(2 ** 31)))
    assert all(np.array_equal(params[k], init[k]) for k in init)


def test_checkpoint_round_trip(tmp_path):
    arch = ModelArchitecture()
    params = init_params(arch, 3)
    save_checkpoint(params, arch, tmp_path / "m.ckpt")
    loaded, arch2 = load_checkpoint(tmp_path / "m.ckpt")
    assert arch2 == arch
    for k in params:
        assert loaded[k].dtype == params[k].dtype
        assert loaded[k].tobytes() == params[k].tobytes()


def test_checkpoint_float64(tmp_path):
    params = init_params(SMALL, 0, dtype=np.float64)
    save_checkpoint(params, SMALL, tmp_path / "m.ckpt")
    loaded, _ = load_checkpoint(tmp_path / "m.ckpt", SMALL)
    assert all(np.array_equal(loaded[k], params[k]) for k in params)


def test_checkpoint_layout(tmp_path):
    params = init_params(SMALL, 0)
    save_checkpoint(params, SMALL, tmp_path / "m.ckpt")
    blob = (tmp_path / "m.ckpt").read_bytes()
    assert blob[:8] == b"MFCKPT\x00\x00"
    version, n = struct.unpack("<II", blob[8:16])
    assert version == 1
    pos = 16 + n
    assert struct.unpack("<I", blob[pos:pos + 4])[0] == len(params)
    (nlen,) = struct.unpack("<H", blob[pos + 4:pos + 6])
    assert blob[pos + 6:pos + 6 + nlen] == b"conv0.weight"


def test_checkpoint_truncated_and_corrupt(tmp_path):
    params = init_params(SMALL, 0)
    save_checkpoint(params, SMALL, tmp_path / "m.ckpt")
    blob = (tmp_path / "m.ckpt").read_bytes()
    for cut in (0, 5, 20, len(blob) // 2, len(blob) - 1):
        (tmp_path / "t.ckpt").write_bytes(blob[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "t.ckpt").write_bytes(blob + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "t.ckpt")
    bad = bytearray(blob)
    bad[8:12] = struct.pack("<I", 7)
    (tmp_path / "t.ckpt").write_bytes(bytes(bad))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "t.ckpt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_checkpoint_architecture_mismatch_names_tensor(tmp_path):
    save_checkpoint(init_params(SMALL, 0), SMALL, tmp_path / "m.ckpt")
    with pytest.raises(CheckpointError, match="conv0.weight"):
        load_checkpoint(tmp_path / "m.ckpt", ModelArchitecture(input_size=16))
