"""Minimal differentiable classifier: a fixed two-conv CNN with exact
backpropagation, soft-target cross-entropy, SGD with momentum, and cosine /
step learning-rate schedules.

Everything runs in float64 numpy on the CPU; checkpoints store parameters as
32-bit floats (magic ``CLOE``). Training is strictly deterministic for a fixed
(seed, epoch) pair.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .augment import apply_augmentation, one_hot
from .core import Dataset

CHECKPOINT_MAGIC = b"CLOE"
CHECKPOINT_VERSION = 1

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b")


@dataclass
class TinyCNN:
    """3->8 conv, pool, 8->16 conv, pool, fully connected head.

    Both convs are 3x3 stride 1 pad 1 followed by ReLU and 2x2 max pooling, so
    the flattened feature size is 16 * (H/4) * (W/4).
    """

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray
    height: int
    width: int
    num_classes: int

    @property
    def feature_dim(self) -> int:
        return 16 * (self.height // 4) * (self.width // 4)

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "TinyCNN":
        return TinyCNN(*(getattr(self, n).copy() for n in PARAM_NAMES),
                       height=self.height, width=self.width, num_classes=self.num_classes)


def init_model(height: int, width: int, num_classes: int, seed: int) -> TinyCNN:
    """Kaiming-uniform fan-in initialization, biases zero."""
    if height % 4 or width % 4:
        raise ValueError(f"height and width must be divisible by 4, got {height}x{width}")
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))

    def uniform(shape, fan_in):
        bound = math.sqrt(6.0 / fan_in)
        return rng.uniform(-bound, bound, size=shape)

    feature_dim = 16 * (height // 4) * (width // 4)
    return TinyCNN(
        conv1_w=uniform((8, 3, 3, 3), 3 * 9),
        conv1_b=np.zeros(8),
        conv2_w=uniform((16, 8, 3, 3), 8 * 9),
        conv2_b=np.zeros(16),
        fc_w=uniform((num_classes, feature_dim), feature_dim),
        fc_b=np.zeros(num_classes),
        height=height, width=width, num_classes=num_classes,
    )


def _conv_forward(x, w, b):
    n, c, h, wd = x.shape
    oc = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * 9)
    out = cols @ w.reshape(oc, -1).T + b
    return out.reshape(n, h, wd, oc).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, w, x_shape, need_dx=True):
    n, c, h, wd = x_shape
    oc = w.shape[0]
    dflat = dout.transpose(0, 2, 3, 1).reshape(n * h * wd, oc)
    dw = (dflat.T @ cols).reshape(w.shape)
    db = dflat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    # col2im accumulated in NHWC: one transpose at the end instead of nine.
    dcols = (dflat @ w.reshape(oc, -1)).reshape(n, h, wd, c, 9)
    dxp = np.zeros((n, h + 2, wd + 2, c))
    for tap in range(9):
        ky, kx = divmod(tap, 3)
        dxp[:, ky:ky + h, kx:kx + wd, :] += dcols[..., tap]
    return dxp[:, 1:1 + h, 1:1 + wd, :].transpose(0, 3, 1, 2), dw, db


def _pool_forward(x):
    n, c, h, w = x.shape
    grouped = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = grouped.reshape(n, c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx, x_shape):
    n, c, h, w = x_shape
    g = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(g, idx[..., None], dout[..., None], axis=-1)
    return g.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)


@dataclass
class ForwardCache:
    x_shape: tuple
    cols1: np.ndarray
    z1: np.ndarray
    idx1: np.ndarray
    p1: np.ndarray
    cols2: np.ndarray
    z2: np.ndarray
    idx2: np.ndarray
    features: np.ndarray


def _forward_impl(model: TinyCNN, images: np.ndarray):
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4 or x.shape[1:] != (3, model.height, model.width):
        raise ValueError(
            f"expected images of shape (n, 3, {model.height}, {model.width}), got {x.shape}")
    z1, cols1 = _conv_forward(x, model.conv1_w, model.conv1_b)
    a1 = np.maximum(z1, 0.0)
    p1, idx1 = _pool_forward(a1)
    z2, cols2 = _conv_forward(p1, model.conv2_w, model.conv2_b)
    a2 = np.maximum(z2, 0.0)
    p2, idx2 = _pool_forward(a2)
    features = p2.reshape(x.shape[0], -1)
    logits = features @ model.fc_w.T + model.fc_b
    cache = ForwardCache(x.shape, cols1, z1, idx1, p1, cols2, z2, idx2, features)
    return logits, features, cache


def forward(model: TinyCNN, images: np.ndarray):
    """Logits and flattened pre-FC features for a batch of images."""
    logits, features, _ = _forward_impl(model, images)
    return logits, features


def backward(model: TinyCNN, images: np.ndarray, dlogits: np.ndarray,
             cache: ForwardCache | None = None) -> dict[str, np.ndarray]:
    """Exact gradients of the loss w.r.t. every parameter array."""
    if cache is None:
        _, _, cache = _forward_impl(model, images)
    dlogits = np.asarray(dlogits, dtype=np.float64)
    dfc_w = dlogits.T @ cache.features
    dfc_b = dlogits.sum(axis=0)
    dfeat = dlogits @ model.fc_w
    n = cache.x_shape[0]
    dp2 = dfeat.reshape(n, 16, model.height // 4, model.width // 4)
    da2 = _pool_backward(dp2, cache.idx2, cache.z2.shape)
    dz2 = da2 * (cache.z2 > 0.0)
    dp1, dconv2_w, dconv2_b = _conv_backward(dz2, cache.cols2, model.conv2_w, cache.p1.shape)
    da1 = _pool_backward(dp1, cache.idx1, cache.z1.shape)
    dz1 = da1 * (cache.z1 > 0.0)
    _, dconv1_w, dconv1_b = _conv_backward(dz1, cache.cols1, model.conv1_w, cache.x_shape,
                                           need_dx=False)
    return {
        "conv1_w": dconv1_w, "conv1_b": dconv1_b,
        "conv2_w": dconv2_w, "conv2_b": dconv2_b,
        "fc_w": dfc_w, "fc_b": dfc_b,
    }


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_ce_soft(logits: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy against soft targets, with its logit gradient.

    Uses the max-subtracted log-sum-exp form; dlogits = (softmax - t) / n.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-(targets * log_probs).sum() / n)
    dlogits = (np.exp(log_probs) - targets) / n
    return loss, dlogits


@dataclass
class OptimState:
    base_lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def sgd_step(model: TinyCNN, grads: dict[str, np.ndarray], optim: OptimState, lr: float) -> TinyCNN:
    """v <- mu*v + g (+ wd*theta); theta <- theta - lr*v. Updates in place."""
    for name in PARAM_NAMES:
        theta = getattr(model, name)
        g = grads[name]
        if optim.weight_decay:
            g = g + optim.weight_decay * theta
        v = optim.velocity.get(name)
        if v is None:
            v = np.zeros_like(theta)
            optim.velocity[name] = v
        v *= optim.momentum
        v += g
        theta -= lr * v
    return model


@dataclass(frozen=True)
class LrSchedule:
    kind: str
    lr_min: float = 0.0
    t_max: int = 100
    period: int = 40
    gamma: float = 0.1

    def __post_init__(self):
        if self.kind not in ("cosine", "step"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.period < 1:
            raise ValueError("period must be >= 1")


def lr_at(schedule: LrSchedule, epoch: int, base_lr: float) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if schedule.kind == "cosine":
        if epoch > schedule.t_max:
            return schedule.lr_min
        return schedule.lr_min + 0.5 * (base_lr - schedule.lr_min) * (
            1.0 + math.cos(math.pi * epoch / schedule.t_max))
    return base_lr * schedule.gamma ** (epoch // schedule.period)


def stack_images(dataset: Dataset, ids=None) -> tuple[np.ndarray, np.ndarray]:
    by_id = dataset.by_id()
    if ids is None:
        samples = dataset.samples
    else:
        samples = [by_id[i] for i in ids]
    if not samples:
        return (np.zeros((0, 3, 1, 1)), np.zeros(0, dtype=np.int64))
    images = np.stack([s.image for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return images, labels


def train_epoch(model: TinyCNN, optim: OptimState, schedule: LrSchedule,
                ids, dataset: Dataset, aug_config, batch_size: int,
                seed: int, epoch: int) -> float:
    """One pass over ids in a (seed, epoch)-deterministic shuffle.

    The final partial batch is kept; batches too small to mix skip
    augmentation. Returns the per-sample mean loss.
    """
    ids = list(ids)
    if not ids:
        raise ValueError("train_epoch needs a non-empty id list")
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    order = rng.permutation(len(ids))
    lr = lr_at(schedule, epoch, optim.base_lr)
    images, labels = stack_images(dataset, ids)
    total = 0.0
    for start in range(0, len(ids), batch_size):
        take = order[start:start + batch_size]
        xb, yb = images[take], labels[take]
        if aug_config is not None and len(take) >= 2:
            xb, targets = apply_augmentation(aug_config, xb, yb, dataset.num_classes, rng)
        else:
            targets = one_hot(yb, dataset.num_classes)
        logits, _, cache = _forward_impl(model, xb)
        loss, dlogits = loss_ce_soft(logits, targets)
        grads = backward(model, xb, dlogits, cache=cache)
        sgd_step(model, grads, optim, lr)
        total += loss * len(take)
    return total / len(ids)


def evaluate(model: TinyCNN, dataset: Dataset, batch_size: int = 256):
    """Softmax probabilities and features in manifest order, no augmentation."""
    if len(dataset) == 0:
        return np.zeros((0, model.num_classes)), np.zeros((0, model.feature_dim))
    images, _ = stack_images(dataset)
    probs, feats = [], []
    for start in range(0, len(dataset), batch_size):
        logits, features = forward(model, images[start:start + batch_size])
        probs.append(softmax(logits))
        feats.append(features)
    return np.concatenate(probs), np.concatenate(feats)


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    return float((np.argmax(probs, axis=1) == labels).mean())


def save_checkpoint(model: TinyCNN, path) -> None:
    """Flat binary checkpoint: magic, version byte, then named float32 arrays."""
    arrays = {"input_shape": np.array([3, model.height, model.width], dtype=np.float64)}
    arrays.update(model.params())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(bytes([CHECKPOINT_VERSION]))
        for name, arr in arrays.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path) -> TinyCNN:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError("not a model checkpoint (bad magic)")
        version = fh.read(1)
        if version != bytes([CHECKPOINT_VERSION]):
            raise ValueError(f"unsupported checkpoint version {version!r}")
        arrays: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len, "array name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            count = int(np.prod(dims)) if rank else 1
            payload = _read_exact(fh, 4 * count, f"payload of {name}")
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)

    missing = [n for n in ("input_shape", *PARAM_NAMES) if n not in arrays]
    if missing:
        raise ValueError(f"checkpoint missing arrays: {missing}")
    _, height, width = (int(v) for v in arrays["input_shape"])
    num_classes = arrays["fc_b"].shape[0]
    return TinyCNN(*(arrays[n] for n in PARAM_NAMES),
                   height=height, width=width, num_classes=num_classes)
