"""A compact convolutional classifier written directly in NumPy.

A parameter-free per-image standardization, four blocks of (3x3 same-padded
conv + bias, ReLU, 2x2 max-pool), global average pooling and a linear layer
to the four action classes. Forward and
backward passes are explicit so gradients can be checked against finite
differences in double precision. Tensors are NHWC internally; batches enter
as NCHW float arrays in [0, 1].
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

Params = dict[str, np.ndarray]

CHECKPOINT_MAGIC = b"MFCKPT\x00\x00"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 1, np.dtype("<f8"): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
STANDARDIZE_EPS = 1e-3


class ModelError(ValueError):
    pass


class CheckpointError(ModelError):
    pass


@dataclass(frozen=True)
class ModelArchitecture:
    input_size: int = 64
    widths: tuple[int, ...] = (16, 32, 64, 128)
    n_classes: int = 4
    in_channels: int = 3
    standardize: bool = True    # per-image input normalization, no parameters

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.input_size % (2 ** len(self.widths)) != 0:
            raise ModelError(
                f"input_size {self.input_size} must be divisible by {2 ** len(self.widths)}")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        c_in = self.in_channels
        for i, c in enumerate(self.widths):
            out[f"conv{i}.weight"] = (c, c_in, 3, 3)
            out[f"conv{i}.bias"] = (c,)
            c_in = c
        out["fc.weight"] = (self.n_classes, c_in)
        out["fc.bias"] = (self.n_classes,)
        return out

    def n_params(self) -> int:
        return sum(math.prod(s) for s in self.shapes().values())

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelArchitecture":
        d = json.loads(text)
        return cls(input_size=d["input_size"], widths=tuple(d["widths"]),
                   n_classes=d["n_classes"], in_channels=d.get("in_channels", 3),
                   standardize=d.get("standardize", True))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ModelError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ModelError("learning rate must be > 0")
        if self.epochs < 0:
            raise ModelError("epochs must be >= 0")


def init_params(arch: ModelArchitecture, seed: int = 0, dtype=np.float32) -> Params:
    """He-uniform conv weights, fan-in uniform head, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in arch.shapes().items():
        if name.endswith("bias"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = math.prod(shape[1:])
        bound = math.sqrt(6.0 / fan_in) if name.startswith("conv") else 1.0 / math.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def check_params(params: Params, arch: ModelArchitecture) -> None:
    for name, shape in arch.shapes().items():
        if name not in params:
            raise ModelError(f"missing tensor {name}")
        if params[name].shape != shape:
            raise ModelError(f"shape mismatch for {name}: expected {shape}, got {params[name].shape}")
    extra = set(params) - set(arch.shapes())
    if extra:
        raise ModelError(f"unexpected tensors: {sorted(extra)}")


# ---------------------------------------------------------------- layers

def _im2col(x: np.ndarray) -> np.ndarray:
    """Rows are output pixels; columns are ordered (tap row, tap col, channel)."""
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.empty((b, h, w, 9, c), dtype=x.dtype)
    for k in range(9):
        i, j = divmod(k, 3)
        cols[:, :, :, k, :] = xp[:, i:i + h, j:j + w, :]
    return cols.reshape(b * h * w, 9 * c)


def _col2im(dcols: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    b, h, w, c = shape
    d = dcols.reshape(b, h, w, 9, c)
    dxp = np.zeros((b, h + 2, w + 2, c), dtype=dcols.dtype)
    for k in range(9):
        i, j = divmod(k, 3)
        dxp[:, i:i + h, j:j + w, :] += d[:, :, :, k, :]
    return dxp[:, 1:-1, 1:-1, :]


def _weight_matrix(w: np.ndarray) -> np.ndarray:
    # (out, in, 3, 3) -> (out, 9 * in) matching the _im2col column order
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def _pool(x: np.ndarray) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
    """2x2 max-pool; the routing masks send each gradient to the first maximal tap."""
    taps = (x[:, 0::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 0::2], x[:, 1::2, 1::2])
    out = np.maximum(np.maximum(taps[0], taps[1]), np.maximum(taps[2], taps[3]))
    taken = taps[0] == out
    masks = [taken]
    for t in taps[1:3]:
        m = (t == out) & ~taken
        taken = taken | m
        masks.append(m)
    masks.append(~taken)
    return out, tuple(masks)


def _unpool(dout: np.ndarray, masks: tuple[np.ndarray, ...]) -> np.ndarray:
    b, h2, w2, c = dout.shape
    dx = np.empty((b, 2 * h2, 2 * w2, c), dtype=dout.dtype)
    zero = dout.dtype.type(0)
    dx[:, 0::2, 0::2] = np.where(masks[0], dout, zero)
    dx[:, 0::2, 1::2] = np.where(masks[1], dout, zero)
    dx[:, 1::2, 0::2] = np.where(masks[2], dout, zero)
    dx[:, 1::2, 1::2] = np.where(masks[3], dout, zero)
    return dx


def _to_nhwc(batch: np.ndarray, arch: ModelArchitecture, dtype) -> np.ndarray:
    s = arch.input_size
    if batch.ndim != 4 or batch.shape[1:] != (arch.in_channels, s, s):
        raise ModelError(
            f"batch shape {batch.shape} does not match (B, {arch.in_channels}, {s}, {s})")
    x = np.ascontiguousarray(batch.transpose(0, 2, 3, 1), dtype=dtype)
    if arch.standardize:
        x = standardize(x)
    return x


def standardize(x: np.ndarray) -> np.ndarray:
    """Remove each image's per-channel mean and divide by its overall spread.

    Faint motion ghosts ride on backgrounds of arbitrary colour; without this
    the first layers spend most of their range on the background level.
    """
    x = x - x.mean(axis=(1, 2), keepdims=True)
    scale = np.sqrt(np.mean(x * x, axis=(1, 2, 3), keepdims=True)) + STANDARDIZE_EPS
    return x / scale


def _forward(params: Params, arch: ModelArchitecture, batch: np.ndarray):
    dtype = params["fc.weight"].dtype
    a = _to_nhwc(batch, arch, dtype)
    caches = []
    for i in range(len(arch.widths)):
        w = params[f"conv{i}.weight"]
        b, h, wd, _ = a.shape
        cols = _im2col(a)
        z = (cols @ _weight_matrix(w).T + params[f"conv{i}.bias"]).reshape(b, h, wd, w.shape[0])
        # max-pool and ReLU commute; pooling first halves the elementwise work
        zp, masks = _pool(z)
        caches.append((a.shape, cols, masks, zp > 0))
        a = np.maximum(zp, 0)
    feat = a.mean(axis=(1, 2))
    logits = feat @ params["fc.weight"].T + params["fc.bias"]
    return logits, (caches, a.shape, feat)


def activation_pattern(params: Params, batch: np.ndarray, arch: ModelArchitecture) -> list[np.ndarray]:
    """Pool routing and ReLU on/off state; the loss is smooth where this stays fixed."""
    caches = _forward(params, arch, batch)[1][0]
    out = []
    for _, _, masks, live in caches:
        out.extend(masks)
        out.append(live)
    return out


def forward(params: Params, batch: np.ndarray, arch: ModelArchitecture) -> np.ndarray:
    """Logits of shape ``(B, n_classes)``."""
    return _forward(params, arch, batch)[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient ``(softmax - onehot) / B``."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if not np.all(np.isfinite(logits)):
        raise ModelError("non-finite logits")
    n, k = logits.shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ModelError("labels must be class indices in [0, n_classes)")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


def _loss_and_grads(params: Params, batch: np.ndarray, labels: np.ndarray,
                    arch: ModelArchitecture) -> tuple[float, Params, np.ndarray]:
    logits, (caches, pooled_shape, feat) = _forward(params, arch, batch)
    loss, dlogits = cross_entropy(logits, labels)
    dlogits = dlogits.astype(feat.dtype, copy=False)
    grads: Params = {
        "fc.weight": dlogits.T @ feat,
        "fc.bias": dlogits.sum(axis=0),
    }
    _, h, w, _ = pooled_shape
    da = np.broadcast_to((dlogits @ params["fc.weight"])[:, None, None, :] / (h * w), pooled_shape)
    for i in reversed(range(len(arch.widths))):
        in_shape, cols, masks, live = caches[i]
        dz = _unpool(np.where(live, da, 0).astype(feat.dtype, copy=False), masks)
        dflat = dz.reshape(-1, dz.shape[-1])
        wt = params[f"conv{i}.weight"]
        gw = dflat.T @ cols
        grads[f"conv{i}.weight"] = gw.reshape(wt.shape[0], 3, 3, wt.shape[1]).transpose(0, 3, 1, 2).copy()
        grads[f"conv{i}.bias"] = dflat.sum(axis=0)
        if i > 0:
            da = _col2im(dflat @ _weight_matrix(wt), in_shape)
    return loss, {k: grads[k] for k in params}, logits


def backward(params: Params, batch: np.ndarray, labels: np.ndarray, arch: ModelArchitecture
             ) -> tuple[float, Params]:
    """Mean cross-entropy over the batch and its exact gradient for every tensor."""
    loss, grads, _ = _loss_and_grads(params, batch, labels, arch)
    return loss, grads


def predict_proba(params: Params, batch: np.ndarray, arch: ModelArchitecture,
                  chunk: int = 256) -> np.ndarray:
    out = [softmax(forward(params, batch[i:i + chunk], arch).astype(np.float64))
           for i in range(0, len(batch), chunk)]
    return np.concatenate(out) if out else np.zeros((0, arch.n_classes))


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamWState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    step: int = 0


def optimizer_step(params: Params, grads: Params, state: AdamWState, cfg: TrainConfig,
                   step_index: int) -> tuple[Params, AdamWState]:
    """One AdamW update: decoupled decay then the bias-corrected adaptive step."""
    if step_index < 1:
        raise ModelError("step_index must be >= 1")
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** step_index
    bc2 = 1.0 - b2 ** step_index
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ModelError(f"gradient shape mismatch for {name}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        decayed = p * (1.0 - cfg.lr * cfg.weight_decay)
        upd = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        new_p[name] = (decayed - cfg.lr * upd).astype(p.dtype, copy=False)
        new_m[name], new_v[name] = m.astype(p.dtype, copy=False), v.astype(p.dtype, copy=False)
    return new_p, AdamWState(new_m, new_v, step_index)


# ---------------------------------------------------------------- training

def accuracy(params: Params, x: np.ndarray, y: np.ndarray, arch: ModelArchitecture) -> float:
    if len(x) == 0:
        return float("nan")
    return float(np.mean(predict_proba(params, x, arch).argmax(axis=1) == y))


def fit(x_train: np.ndarray, y_train: np.ndarray, arch: ModelArchitecture, cfg: TrainConfig,
        x_val: np.ndarray | None = None, y_val: np.ndarray | None = None,
        on_epoch: Callable[[dict], None] | None = None) -> tuple[Params, list[dict]]:
    """Mini-batch AdamW on in-memory arrays.

    Returns the parameters with the best validation accuracy (first on ties;
    the last epoch's when no validation set is given) and the per-epoch log.
    """
    if len(x_train) == 0:
        raise ModelError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(arch, seed=int(rng.integers(2 ** 31)))
    state = AdamWState()
    best, best_acc = {k: v.copy() for k, v in params.items()}, -1.0
    history = []
    step = 0
    n = len(x_train)
    has_val = x_val is not None and len(x_val) > 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            loss, grads, logits = _loss_and_grads(params, xb, yb, arch)
            if not math.isfinite(loss):
                raise ModelError(f"non-finite loss at epoch {epoch}")
            step += 1
            params, state = optimizer_step(params, grads, state, cfg, step)
            total += loss * len(idx)
            correct += int(np.sum(logits.argmax(axis=1) == yb))
        train_acc = correct / n
        row = {"epoch": epoch, "loss": round(total / n, 6), "train_acc": round(train_acc, 6)}
        if has_val:
            val_acc = accuracy(params, x_val, y_val, arch)
            row["val_acc"] = round(val_acc, 6)
            if val_acc > best_acc:
                best_acc = val_acc
                best = {k: v.copy() for k, v in params.items()}
        else:
            best = params
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return best, history


def train(train_manifest, val_manifest, arch: ModelArchitecture, cfg: TrainConfig,
          on_epoch: Callable[[dict], None] | None = None) -> tuple[Params, list[dict]]:
    """Load the manifest splits into memory and run :func:`fit`."""
    from motionforge.dataset import load_batch

    x_tr, y_tr = load_batch(train_manifest, range(len(train_manifest)), arch.input_size)
    x_va = y_va = None
    if val_manifest is not None and len(val_manifest):
        x_va, y_va = load_batch(val_manifest, range(len(val_manifest)), arch.input_size)
    return fit(x_tr, y_tr, arch, cfg, x_va, y_va, on_epoch=on_epoch)


def format_log(history: list[dict]) -> str:
    return "".join(json.dumps(row, sort_keys=True) + "\n" for row in history)


# ---------------------------------------------------------------- checkpoints
#
# Layout (all integers little-endian):
#   8 bytes  magic "MFCKPT\0\0"
#   u32      format version
#   u32      length L of the architecture JSON, then L bytes UTF-8 JSON
#   u32      tensor count
#   per tensor: u16 name length, name (UTF-8), u8 dtype (1=f32, 2=f64),
#               u8 ndim, ndim x u32 dims, then the row-major data.

def save_checkpoint(params: Params, arch: ModelArchitecture, path: str | Path) -> None:
    check_params(params, arch)
    arch_blob = arch.to_json().encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arch_blob)), arch_blob,
             struct.pack("<I", len(params))]
    for name, t in params.items():
        data = np.ascontiguousarray(t, dtype=t.dtype.newbyteorder("<"))
        if data.dtype not in _DTYPE_CODES:
            raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<BB", _DTYPE_CODES[data.dtype], data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path: str | Path, arch: ModelArchitecture | None = None
                    ) -> tuple[Params, ModelArchitecture]:
    """Read a checkpoint; if ``arch`` is given the tensors must fit it."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError(f"truncated checkpoint {path}")
        out = blob[pos:pos + n]
        pos += n
        return out

    if take(8) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a motionforge checkpoint")
    version, arch_len = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        stored = ModelArchitecture.from_json(take(arch_len).decode())
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"bad architecture descriptor: {exc}") from None
    (count,) = struct.unpack("<I", take(4))
    params: Params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"unknown dtype code {code} for {name}")
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        dt = _CODE_DTYPES[code]
        n = math.prod(dims)
        params[name] = np.frombuffer(take(n * dt.itemsize), dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
    if pos != len(blob):
        raise CheckpointError(f"trailing bytes in checkpoint {path}")
    target = arch if arch is not None else stored
    try:
        check_params(params, target)
    except ModelError as exc:
        raise CheckpointError(str(exc)) from None
    return params, target
