"""The fixed 1D-CNN probe: tensor kernels, exact gradients, training loop.

Architecture: three conv blocks along time (conv -> batchnorm -> ReLU) with
64/128/256 filters and kernel 5, global average pooling, linear head,
softmax. Convolutions use `same` zero padding and stride 1; inputs shorter
than the kernel are symmetrically zero-padded to kernel length. Variable
length batches are packed with a validity mask so padded positions never
enter batch statistics or pooling.

Gradients are hand-derived for this architecture (no autodiff). All math is
float64 in memory; checkpoints serialize parameters as float32.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DegenerateData,
    DivergedLoss,
    ShapeMismatch,
    TruncatedPayload,
    ValidationError,
    VersionMismatch,
)

CHECKPOINT_MAGIC = b"TPNN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ClassifierConfig:
    in_dim: int
    n_classes: int
    conv_channels: tuple = (64, 128, 256)
    kernel_size: int = 5
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def validate(self) -> None:
        if self.in_dim < 1:
            raise ValidationError("in_dim must be positive")
        if self.n_classes < 2:
            raise ValidationError("need at least 2 classes")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValidationError("kernel size must be odd and positive")
        if not self.conv_channels:
            raise ValidationError("need at least one conv block")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 7
    val_fraction: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if min(self.learning_rate, self.adam_eps, self.val_fraction) <= 0:
            raise ValidationError("train config fields must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValidationError("batch size and epochs must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValidationError("Adam betas must lie in (0, 1)")
        if not 0 < self.patience < self.max_epochs:
            raise ValidationError("patience must lie in (0, max_epochs)")


@dataclass
class TrainTrace:
    train_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = -1


@dataclass
class ClassifierModel:
    config: ClassifierConfig
    params: dict  # name -> float64 ndarray
    running: dict  # bn running mean/var, float64
    rng_seed: int = 0

    def param_names(self) -> list[str]:
        return sorted(self.params)

    def validate(self) -> None:
        self.config.validate()
        for name, shape in _parameter_shapes(self.config).items():
            if name not in self.params or self.params[name].shape != shape:
                raise ValidationError(f"parameter {name} missing or misshaped")
            if not np.isfinite(self.params[name]).all():
                raise ValidationError(f"parameter {name} contains non-finite values")
        for name, value in self.running.items():
            if not np.isfinite(value).all():
                raise ValidationError(f"running stat {name} is non-finite")


def _parameter_shapes(cfg: ClassifierConfig) -> dict:
    shapes = {}
    c_in = cfg.in_dim
    for i, c_out in enumerate(cfg.conv_channels):
        shapes[f"conv{i}_w"] = (c_out, cfg.kernel_size, c_in)
        shapes[f"conv{i}_b"] = (c_out,)
        shapes[f"bn{i}_gamma"] = (c_out,)
        shapes[f"bn{i}_beta"] = (c_out,)
        c_in = c_out
    shapes["head_w"] = (cfg.n_classes, cfg.conv_channels[-1])
    shapes["head_b"] = (cfg.n_classes,)
    return shapes


def _init_params(cfg: ClassifierConfig, rng) -> dict:
    """Kaiming-uniform conv/linear weights, zero biases, unit BN gains."""
    params = {}
    c_in = cfg.in_dim
    for i, c_out in enumerate(cfg.conv_channels):
        bound = np.sqrt(6.0 / (cfg.kernel_size * c_in))
        params[f"conv{i}_w"] = rng.uniform(
            -bound, bound, size=(c_out, cfg.kernel_size, c_in)
        )
        params[f"conv{i}_b"] = np.zeros(c_out)
        params[f"bn{i}_gamma"] = np.ones(c_out)
        params[f"bn{i}_beta"] = np.zeros(c_out)
        c_in = c_out
    bound = np.sqrt(6.0 / cfg.conv_channels[-1])
    params["head_w"] = rng.uniform(
        -bound, bound, size=(cfg.n_classes, cfg.conv_channels[-1])
    )
    params["head_b"] = np.zeros(cfg.n_classes)
    return params


def _fresh_running(cfg: ClassifierConfig) -> dict:
    running = {}
    for i, c_out in enumerate(cfg.conv_channels):
        running[f"bn{i}_mean"] = np.zeros(c_out)
        running[f"bn{i}_var"] = np.ones(c_out)
    return running


def init_model(cfg: ClassifierConfig, seed: int = 0) -> ClassifierModel:
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return ClassifierModel(
        config=cfg,
        params=_init_params(cfg, rng),
        running=_fresh_running(cfg),
        rng_seed=seed,
    )


# --- batch packing ----------------------------------------------------------


def pack_batch(feature_list, kernel_size: int):
    """Stack variable-length T x D matrices into (B, Tmax, D) plus lengths.

    Matrices shorter than the kernel are symmetrically zero-padded to kernel
    length first (their effective length becomes the kernel size).
    """
    mats = [np.asarray(f, dtype=np.float64) for f in feature_list]
    dims = {m.shape[1] for m in mats}
    if len(dims) != 1:
        raise ShapeMismatch(f"inconsistent feature dims in batch: {sorted(dims)}")
    lengths = np.array([max(m.shape[0], kernel_size) for m in mats], dtype=np.int64)
    t_max = int(lengths.max())
    x = np.zeros((len(mats), t_max, mats[0].shape[1]))
    for i, m in enumerate(mats):
        if m.shape[0] >= kernel_size:
            x[i, : m.shape[0]] = m
        else:
            off = (kernel_size - m.shape[0]) // 2
            x[i, off : off + m.shape[0]] = m
    return x, lengths


def _mask_from_lengths(lengths: np.ndarray, t_max: int) -> np.ndarray:
    return (np.arange(t_max)[None, :] < lengths[:, None]).astype(np.float64)[:, :, None]


# --- layer kernels ----------------------------------------------------------


def _conv1d_forward(x, w, b):
    batch, t_len, c_in = x.shape
    c_out, kernel, _ = w.shape
    pad = kernel // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=1)
    xmat = win.reshape(batch * t_len, c_in * kernel)
    wmat = w.transpose(2, 1, 0).reshape(c_in * kernel, c_out)
    y = (xmat @ wmat).reshape(batch, t_len, c_out) + b
    return y, xmat


def _conv1d_backward(dy, xmat, w, x_shape):
    batch, t_len, c_in = x_shape
    c_out, kernel, _ = w.shape
    pad = kernel // 2
    dymat = dy.reshape(batch * t_len, c_out)
    wmat = w.transpose(2, 1, 0).reshape(c_in * kernel, c_out)
    dw = (xmat.T @ dymat).reshape(c_in, kernel, c_out).transpose(2, 1, 0)
    db = dymat.sum(axis=0)
    dwin = (dymat @ wmat.T).reshape(batch, t_len, c_in, kernel)
    dxp = np.zeros((batch, t_len + 2 * pad, c_in))
    for k in range(kernel):
        dxp[:, k : k + t_len, :] += dwin[:, :, :, k]
    return dw, db, dxp[:, pad : pad + t_len, :]


def _bn_forward_train(y, gamma, beta, mask, n_valid, eps):
    mean = (y * mask).sum(axis=(0, 1)) / n_valid
    centered = (y - mean) * mask
    var = (centered**2).sum(axis=(0, 1)) / n_valid
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (y - mean) * inv_std
    return gamma * xhat + beta, xhat, inv_std, mean, var


def _bn_forward_infer(y, gamma, beta, run_mean, run_var, eps):
    inv_std = 1.0 / np.sqrt(run_var + eps)
    return gamma * (y - run_mean) * inv_std + beta


def _bn_backward(dy, xhat, inv_std, gamma, mask, n_valid):
    # dy is already zero at masked positions
    dgamma = (dy * xhat).sum(axis=(0, 1))
    dbeta = dy.sum(axis=(0, 1))
    dx = (gamma * inv_std) * (dy - dbeta / n_valid - xhat * (dgamma / n_valid))
    return dx * mask, dgamma, dbeta


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _forward_full(model: ClassifierModel, x, lengths, training: bool):
    """Shared forward pass; returns probabilities and a backward cache."""
    cfg = model.config
    if x.ndim != 3 or x.shape[2] != cfg.in_dim:
        raise ShapeMismatch(
            f"expected batch x time x {cfg.in_dim}, got {x.shape}"
        )
    if lengths is None:
        lengths = np.full(x.shape[0], x.shape[1], dtype=np.int64)
    mask = _mask_from_lengths(lengths, x.shape[1])
    n_valid = float(lengths.sum())
    cache = {"mask": mask, "n_valid": n_valid, "lengths": lengths, "blocks": []}

    h = x * mask
    for i in range(len(cfg.conv_channels)):
        w, b = model.params[f"conv{i}_w"], model.params[f"conv{i}_b"]
        gamma, beta = model.params[f"bn{i}_gamma"], model.params[f"bn{i}_beta"]
        y, xmat = _conv1d_forward(h, w, b)
        if training:
            z, xhat, inv_std, bmean, bvar = _bn_forward_train(
                y, gamma, beta, mask, n_valid, cfg.bn_eps
            )
        else:
            z = _bn_forward_infer(
                y,
                gamma,
                beta,
                model.running[f"bn{i}_mean"],
                model.running[f"bn{i}_var"],
                cfg.bn_eps,
            )
            xhat, inv_std, bmean, bvar = None, None, None, None
        relu_gate = (z > 0).astype(np.float64)
        h_next = z * relu_gate * mask
        cache["blocks"].append(
            {
                "x_shape": h.shape,
                "xmat": xmat,
                "xhat": xhat,
                "inv_std": inv_std,
                "batch_mean": bmean,
                "batch_var": bvar,
                "relu_gate": relu_gate,
            }
        )
        h = h_next

    pooled = h.sum(axis=1) / lengths[:, None]
    logits = pooled @ model.params["head_w"].T + model.params["head_b"]
    probs = _softmax(logits)
    cache["pooled"] = pooled
    return probs, cache


def forward(model: ClassifierModel, batch, lengths=None, training: bool = False):
    """Class probabilities for a (B, T, D) batch; rows sum to 1."""
    x = np.asarray(batch, dtype=np.float64)
    probs, _ = _forward_full(model, x, lengths, training)
    return probs


def loss_and_grad(model: ClassifierModel, batch, labels, lengths=None):
    """Cross-entropy loss and gradients for every trainable parameter.

    Batch norm runs in training mode (batch statistics); running statistics
    are not touched, so the function is pure.
    """
    x = np.asarray(batch, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    cfg = model.config
    if labels.ndim != 1 or len(labels) != x.shape[0]:
        raise ShapeMismatch("labels must align with the batch")
    if labels.min() < 0 or labels.max() >= cfg.n_classes:
        raise ValidationError(f"labels must lie in [0, {cfg.n_classes})")

    probs, cache = _forward_full(model, x, lengths, training=True)
    loss, grads = _backward_from_cache(model, probs, cache, labels)
    return loss, grads


def _backward_from_cache(model: ClassifierModel, probs, cache, labels):
    cfg = model.config
    batch_size = probs.shape[0]
    eps = 1e-300  # guard exact zeros out of log
    loss = float(-np.log(np.maximum(probs[np.arange(batch_size), labels], eps)).mean())

    grads = {}
    dlogits = probs.copy()
    dlogits[np.arange(batch_size), labels] -= 1.0
    dlogits /= batch_size

    grads["head_w"] = dlogits.T @ cache["pooled"]
    grads["head_b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ model.params["head_w"]

    mask = cache["mask"]
    lengths_arr = cache["lengths"]
    dh = dpooled[:, None, :] / lengths_arr[:, None, None] * mask

    for i in reversed(range(len(cfg.conv_channels))):
        blk = cache["blocks"][i]
        dz = dh * blk["relu_gate"] * mask
        dz, dgamma, dbeta = _bn_backward(
            dz,
            blk["xhat"],
            blk["inv_std"],
            model.params[f"bn{i}_gamma"],
            mask,
            cache["n_valid"],
        )
        grads[f"bn{i}_gamma"] = dgamma
        grads[f"bn{i}_beta"] = dbeta
        dw, db, dh = _conv1d_backward(
            dz, blk["xmat"], model.params[f"conv{i}_w"], blk["x_shape"]
        )
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
        dh = dh * mask
    return loss, grads


class AdamOptimizer:
    """Standard Adam with bias correction; updates in sorted-name order."""

    def __init__(self, params: dict, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name in sorted(params):
            g = grads[name]
            self.m[name] = c.beta1 * self.m[name] + (1.0 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1.0 - c.beta2) * g * g
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            params[name] -= c.learning_rate * m_hat / (np.sqrt(v_hat) + c.adam_eps)


def _evaluate_accuracy(model, features, labels, batch_size):
    correct = 0
    for start in range(0, len(features), batch_size):
        chunk = features[start : start + batch_size]
        x, lengths = pack_batch(chunk, model.config.kernel_size)
        probs = forward(model, x, lengths, training=False)
        pred = probs.argmax(axis=1)
        correct += int((pred == labels[start : start + batch_size]).sum())
    return correct / len(features)


def train(features, labels, cfg: ClassifierConfig, train_cfg: TrainConfig):
    """Deterministic training; returns the model at the best validation epoch.

    `features` is a list of T_i x D matrices, `labels` integer classes.
    A seeded 10% carve-out of the training data drives early stopping.
    """
    cfg.validate()
    train_cfg.validate()
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) != len(labels):
        raise ShapeMismatch("features and labels must align")
    if len(np.unique(labels)) < 2:
        raise DegenerateData("training data contains a single class")

    seed_root = np.random.SeedSequence(train_cfg.seed)
    init_seq, shuffle_seq, split_seq = seed_root.spawn(3)
    model = ClassifierModel(
        config=cfg,
        params=_init_params(cfg, np.random.default_rng(init_seq)),
        running=_fresh_running(cfg),
        rng_seed=train_cfg.seed,
    )
    optimizer = AdamOptimizer(model.params, train_cfg)

    n = len(features)
    split_rng = np.random.default_rng(split_seq)
    perm = split_rng.permutation(n)
    n_val = max(1, int(round(train_cfg.val_fraction * n)))
    if n_val >= n:
        raise DegenerateData("not enough data for a validation carve-out")
    val_idx = perm[:n_val]
    tr_idx = perm[n_val:]
    if len(np.unique(labels[tr_idx])) < 2:
        raise DegenerateData("training split lost all but one class")

    val_feats = [features[i] for i in val_idx]
    val_labels = labels[val_idx]

    shuffle_rng = np.random.default_rng(shuffle_seq)
    trace = TrainTrace()
    best = {
        "val": -1.0,
        "params": {k: v.copy() for k, v in model.params.items()},
        "running": {k: v.copy() for k, v in model.running.items()},
    }
    stale = 0
    momentum = cfg.bn_momentum
    for epoch in range(train_cfg.max_epochs):
        order = shuffle_rng.permutation(tr_idx)
        loss_sum = 0.0
        for start in range(0, len(order), train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            x, lengths = pack_batch([features[i] for i in idx], cfg.kernel_size)
            probs, cache = _forward_full(model, x, lengths, training=True)
            loss, grads = _backward_from_cache(model, probs, cache, labels[idx])
            if not np.isfinite(loss):
                raise DivergedLoss(f"loss diverged at epoch {epoch}")
            optimizer.step(model.params, grads)
            n_valid = float(lengths.sum())
            bessel = n_valid / max(1.0, n_valid - 1.0)
            for i, blk in enumerate(cache["blocks"]):
                model.running[f"bn{i}_mean"] *= 1.0 - momentum
                model.running[f"bn{i}_mean"] += momentum * blk["batch_mean"]
                model.running[f"bn{i}_var"] *= 1.0 - momentum
                model.running[f"bn{i}_var"] += momentum * blk["batch_var"] * bessel
            loss_sum += loss * len(idx)
        trace.train_loss.append(loss_sum / len(order))

        val_acc = _evaluate_accuracy(model, val_feats, val_labels, train_cfg.batch_size)
        trace.val_accuracy.append(val_acc)
        if val_acc > best["val"]:
            best["val"] = val_acc
            best["params"] = {k: v.copy() for k, v in model.params.items()}
            best["running"] = {k: v.copy() for k, v in model.running.items()}
            trace.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= train_cfg.patience:
                break

    model.params = best["params"]
    model.running = best["running"]
    return model, trace



def predict(model: ClassifierModel, features):
    """Predicted class and probability vector for a single utterance.

    Accepts a T x D array or any object carrying one in a `data` attribute
    (a stored feature matrix).
    """
    if isinstance(features, np.ndarray):
        data = features
    else:
        data = getattr(features, "data", features)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.config.in_dim:
        raise ShapeMismatch(
            f"utterance features must be T x {model.config.in_dim}, got {data.shape}"
        )
    x, lengths = pack_batch([data], model.config.kernel_size)
    probs = forward(model, x, lengths, training=False)[0]
    return int(probs.argmax()), probs


# --- checkpoints ------------------------------------------------------------


def save_checkpoint(model: ClassifierModel, path) -> Path:
    """Versioned binary: magic, config block, float32 parameter blobs, CRC32."""
    model.validate()
    cfg = model.config
    path = Path(path)
    body = struct.pack(
        "<4sHIIIH",
        CHECKPOINT_MAGIC,
        CHECKPOINT_VERSION,
        cfg.in_dim,
        cfg.n_classes,
        cfg.kernel_size,
        len(cfg.conv_channels),
    )
    body += struct.pack(f"<{len(cfg.conv_channels)}I", *cfg.conv_channels)
    body += struct.pack("<ddQ", cfg.bn_eps, cfg.bn_momentum, model.rng_seed)
    for name in sorted(model.params):
        body += np.ascontiguousarray(model.params[name], dtype="<f4").tobytes()
    for name in sorted(model.running):
        body += np.ascontiguousarray(model.running[name], dtype="<f4").tobytes()
    crc = zlib.crc32(body) & 0xFFFFFFFF
    path.write_bytes(body + struct.pack("<I", crc))
    return path


def load_checkpoint(path) -> ClassifierModel:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 20:
        raise TruncatedPayload(f"{path}: too small for a checkpoint")
    magic, version, in_dim, n_classes, kernel, n_conv = struct.unpack_from(
        "<4sHIIIH", blob, 0
    )
    if magic != CHECKPOINT_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: unsupported version {version}")
    off = 20
    channels = struct.unpack_from(f"<{n_conv}I", blob, off)
    off += 4 * n_conv
    bn_eps, bn_momentum, rng_seed = struct.unpack_from("<ddQ", blob, off)
    off += 24
    cfg = ClassifierConfig(
        in_dim=in_dim,
        n_classes=n_classes,
        conv_channels=tuple(channels),
        kernel_size=kernel,
        bn_eps=bn_eps,
        bn_momentum=bn_momentum,
    )
    shapes = _parameter_shapes(cfg)
    running_shapes = {}
    for i, c_out in enumerate(channels):
        running_shapes[f"bn{i}_mean"] = (c_out,)
        running_shapes[f"bn{i}_var"] = (c_out,)
    total = sum(int(np.prod(s)) for s in shapes.values()) + sum(
        int(np.prod(s)) for s in running_shapes.values()
    )
    expected = off + 4 * total + 4
    if len(blob) != expected:
        raise TruncatedPayload(f"{path}: expected {expected} bytes, got {len(blob)}")
    crc = struct.unpack_from("<I", blob, expected - 4)[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise TruncatedPayload(f"{path}: CRC mismatch")

    params = {}
    for name in sorted(shapes):
        count = int(np.prod(shapes[name]))
        params[name] = (
            np.frombuffer(blob, dtype="<f4", count=count, offset=off)
            .astype(np.float64)
            .reshape(shapes[name])
        )
        off += 4 * count
    running = {}
    for name in sorted(running_shapes):
        count = int(np.prod(running_shapes[name]))
        running[name] = (
            np.frombuffer(blob, dtype="<f4", count=count, offset=off)
            .astype(np.float64)
            .reshape(running_shapes[name])
        )
        off += 4 * count
    model = ClassifierModel(config=cfg, params=params, running=running, rng_seed=rng_seed)
    model.validate()
    return model
