"""The per-stage MLP: forward pass, multi-task loss, exact gradients, Adam.

Both stages share one architecture: a ReLU trunk feeding a softmax
classification head with ``n_classes + 1`` logits (index 0 is
background) and a regression head with one boundary-offset pair per
non-background class. The proposal stage is the ``n_classes = 1``
special case, so its actionness score is the probability of class 1.

The total loss is ``L = L_cls + lambda * L_reg`` where ``L_cls`` is mean
cross-entropy and ``L_reg`` sums, over positive samples only, the L1
error of the true class's predicted offset pair, divided by the batch
size. The L1 subgradient at zero residual is taken as 0.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, MissingTargetError, ShapeError
from .offsets import OffsetScheme
from .sampling import LabeledWindow, Minibatch, Stage, build_minibatch

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelShape:
    input_dim: int
    hidden_dims: tuple[int, ...]
    n_classes: int
    stage: Stage

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be non-empty positive, got {self.hidden_dims}")
        if self.n_classes < 1:
            raise ValueError(f"n_classes must be >= 1, got {self.n_classes}")
        if self.stage is Stage.PROPOSAL and self.n_classes != 1:
            raise ValueError("proposal stage is binary: n_classes must be 1")

    @property
    def n_logits(self) -> int:
        return self.n_classes + 1

    @property
    def n_offset_outputs(self) -> int:
        return 2 * self.n_classes


def param_order(shape: ModelShape) -> list[str]:
    names = []
    for i in range(len(shape.hidden_dims)):
        names += [f"w{i}", f"b{i}"]
    return names + ["cls_w", "cls_b", "reg_w", "reg_b"]


def init_params(shape: ModelShape, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""

    def glorot(fan_in: int, fan_out: int) -> np.ndarray:
        a = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_in, fan_out))

    params: dict[str, np.ndarray] = {}
    prev = shape.input_dim
    for i, h in enumerate(shape.hidden_dims):
        params[f"w{i}"] = glorot(prev, h)
        params[f"b{i}"] = np.zeros(h)
        prev = h
    params["cls_w"] = glorot(prev, shape.n_logits)
    params["cls_b"] = np.zeros(shape.n_logits)
    params["reg_w"] = glorot(prev, shape.n_offset_outputs)
    params["reg_b"] = np.zeros(shape.n_offset_outputs)
    return params


@dataclass(frozen=True)
class StageOutput:
    """Class probabilities and per-class offset predictions."""

    probs: np.ndarray
    offsets: np.ndarray


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_full(params, shape, x):
    pre, act = [], [x]
    a = x
    for i in range(len(shape.hidden_dims)):
        z = a @ params[f"w{i}"] + params[f"b{i}"]
        pre.append(z)
        a = np.maximum(z, 0.0)
        act.append(a)
    logits = a @ params["cls_w"] + params["cls_b"]
    offsets = (a @ params["reg_w"] + params["reg_b"]).reshape(len(x), shape.n_classes, 2)
    return _softmax(logits), offsets, pre, act


def forward(params: dict[str, np.ndarray], shape: ModelShape, feature: np.ndarray) -> StageOutput:
    """Run the network on one feature vector or a batch of them."""
    x = np.asarray(feature, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != shape.input_dim:
        raise ShapeError(f"expected features of dim {shape.input_dim}, got shape {x.shape}")
    probs, offsets, _, _ = _forward_full(params, shape, x)
    if single:
        return StageOutput(probs[0], offsets[0])
    return StageOutput(probs, offsets)


def _check_targets(labels, targets):
    pos = labels > 0
    if pos.any() and not np.isfinite(targets[pos]).all():
        raise MissingTargetError("positive samples must carry finite offset targets")
    return pos


def loss(
    output: StageOutput, labels: np.ndarray, targets: np.ndarray, lam: float
) -> tuple[float, float, float]:
    """Return (L, L_cls, L_reg) for a batch of outputs.

    `labels` holds class ids (0 = background); `targets` is batch x 2,
    read only on rows with a positive label.
    """
    probs, offsets = np.atleast_2d(output.probs), output.offsets
    if offsets.ndim == 2:
        offsets = offsets[None, :, :]
    n = len(probs)
    if n == 0:
        raise ValueError("loss needs a non-empty batch")
    labels = np.asarray(labels)
    targets = np.asarray(targets, dtype=np.float64)
    pos = _check_targets(labels, targets)
    p_true = probs[np.arange(n), labels]
    l_cls = float(-np.log(np.clip(p_true, 1e-300, None)).mean())
    l_reg = 0.0
    if pos.any():
        picked = offsets[pos, labels[pos] - 1, :]
        l_reg = float(np.abs(picked - targets[pos]).sum() / n)
    return l_cls + lam * l_reg, l_cls, l_reg


def backward(
    params: dict[str, np.ndarray],
    shape: ModelShape,
    x: np.ndarray,
    labels: np.ndarray,
    targets: np.ndarray,
    lam: float,
) -> tuple[tuple[float, float, float], dict[str, np.ndarray]]:
    """Analytic gradients of the full loss for one batch.

    Returns ((L, L_cls, L_reg), grads) with grads shaped like `params`.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != shape.input_dim:
        raise ShapeError(f"expected features of dim {shape.input_dim}, got shape {x.shape}")
    n = len(x)
    labels = np.asarray(labels)
    targets = np.asarray(targets, dtype=np.float64)
    pos = _check_targets(labels, targets)

    probs, offsets, pre, act = _forward_full(params, shape, x)
    p_true = probs[np.arange(n), labels]
    l_cls = float(-np.log(np.clip(p_true, 1e-300, None)).mean())
    l_reg = 0.0

    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n

    d_off = np.zeros_like(offsets)
    if pos.any():
        picked = offsets[pos, labels[pos] - 1, :]
        resid = picked - targets[pos]
        l_reg = float(np.abs(resid).sum() / n)
        d_off[pos, labels[pos] - 1, :] = lam * np.sign(resid) / n

    grads: dict[str, np.ndarray] = {}
    last = act[-1]
    grads["cls_w"] = last.T @ d_logits
    grads["cls_b"] = d_logits.sum(axis=0)
    d_off_flat = d_off.reshape(n, shape.n_offset_outputs)
    grads["reg_w"] = last.T @ d_off_flat
    grads["reg_b"] = d_off_flat.sum(axis=0)
    d_a = d_logits @ params["cls_w"].T + d_off_flat @ params["reg_w"].T
    for i in reversed(range(len(shape.hidden_dims))):
        d_z = d_a * (pre[i] > 0)
        grads[f"w{i}"] = act[i].T @ d_z
        grads[f"b{i}"] = d_z.sum(axis=0)
        d_a = d_z @ params[f"w{i}"].T
    return (l_cls + lam * l_reg, l_cls, l_reg), grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    t: int,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, in place; t is 1-based."""
    if t < 1:
        raise ValueError(f"step index must be >= 1, got {t}")
    for k, g in grads.items():
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient for parameter {k!r}")
        m = state.m[k]
        v = state.v[k]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        params[k] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


@dataclass(frozen=True)
class TrainConfig:
    stage: Stage
    epochs: int
    learning_rate: float = 0.005
    batch_size: int = 128
    lam: float = 2.0
    hidden_dims: tuple[int, ...] = (1000,)
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class StageModel:
    """A trained (or freshly initialized) stage: weights plus their meaning."""

    params: dict[str, np.ndarray]
    shape: ModelShape
    scheme: OffsetScheme
    history: list[tuple[float, float, float]] = field(default_factory=list)


def train(
    config: TrainConfig,
    features: np.ndarray,
    pool: list[LabeledWindow],
    n_classes: int,
    scheme: OffsetScheme,
    log_path: str | Path | None = None,
) -> StageModel:
    """Train one stage on a pooled-feature matrix and its labeled windows.

    `features` row i is the pooled feature of ``pool[i]``. One epoch is
    ``ceil(len(pool) / batch_size)`` minibatches; per-epoch mean
    (L, L_cls, L_reg) goes to `history` and, when `log_path` is given,
    to a CSV training log. ``epochs=0`` returns the initialization.
    """
    rng = np.random.default_rng(config.seed)
    n = 1 if config.stage is Stage.PROPOSAL else n_classes
    shape = ModelShape(features.shape[1], config.hidden_dims, n, config.stage)
    params = init_params(shape, rng)
    state = AdamState.zeros_like(params)
    steps_per_epoch = max(1, math.ceil(len(pool) / config.batch_size))

    history: list[tuple[float, float, float]] = []
    t = 0
    for _ in range(config.epochs):
        acc = np.zeros(3)
        for _ in range(steps_per_epoch):
            mb: Minibatch = build_minibatch(
                pool, config.stage, config.batch_size, rng, n_classes=n
            )
            losses, grads = backward(
                params, shape, features[mb.indices], mb.labels, mb.targets, config.lam
            )
            t += 1
            adam_step(params, grads, state, t, config.learning_rate)
            acc += losses
        history.append(tuple(float(v) for v in acc / steps_per_epoch))

    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "L", "L_cls", "L_reg"])
            for epoch, (total, l_cls, l_reg) in enumerate(history):
                writer.writerow([epoch, repr(total), repr(l_cls), repr(l_reg)])
    return StageModel(params, shape, scheme, history)


def save_checkpoint(path: str | Path, model: StageModel, seed: int) -> None:
    """Write a length-prefixed JSON header followed by an f32 weight blob."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "stage": model.shape.stage.value,
        "shape": {
            "input_dim": model.shape.input_dim,
            "hidden_dims": list(model.shape.hidden_dims),
            "n_classes": model.shape.n_classes,
        },
        "offset_scheme": model.scheme.value,
        "seed": seed,
    }
    blob = b"".join(
        np.ascontiguousarray(model.params[k], dtype="<f4").tobytes()
        for k in param_order(model.shape)
    )
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(struct.pack("<I", len(encoded)) + encoded + blob)


def load_checkpoint(path: str | Path) -> StageModel:
    raw = Path(path).read_bytes()
    (header_len,) = struct.unpack_from("<I", raw)
    header = json.loads(raw[4 : 4 + header_len].decode("utf-8"))
    if header["format_version"] != CHECKPOINT_VERSION:
        raise ShapeError(f"unsupported checkpoint version {header['format_version']}")
    shape = ModelShape(
        header["shape"]["input_dim"],
        tuple(header["shape"]["hidden_dims"]),
        header["shape"]["n_classes"],
        Stage(header["stage"]),
    )
    scheme = OffsetScheme(header["offset_scheme"])
    params: dict[str, np.ndarray] = {}
    offset = 4 + header_len
    prev = shape.input_dim
    dims: dict[str, tuple[int, ...]] = {}
    for i, h in enumerate(shape.hidden_dims):
        dims[f"w{i}"], dims[f"b{i}"] = (prev, h), (h,)
        prev = h
    dims["cls_w"], dims["cls_b"] = (prev, shape.n_logits), (shape.n_logits,)
    dims["reg_w"], dims["reg_b"] = (prev, shape.n_offset_outputs), (shape.n_offset_outputs,)
    for name in param_order(shape):
        count = int(np.prod(dims[name]))
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        params[name] = arr.astype(np.float64).reshape(dims[name])
        offset += count * 4
    if offset != len(raw):
        raise ShapeError(f"{path}: checkpoint has {len(raw) - offset} unexpected trailing bytes")
    return StageModel(params, shape, scheme)
