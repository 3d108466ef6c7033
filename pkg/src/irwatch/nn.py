"""Forward/backward passes, weighted BCE, Adam, plateau LR schedule and
early stopping: the full training loop for the template family.

Everything stochastic (weight init, per-epoch shuffling) draws from purpose
keyed streams of one `Rng`, so a run is a pure function of
(architecture, dataset arrays, TrainConfig).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import backend, metrics
from .arch import ArchConfig, shape_plan
from .rng import Rng
from .tensor import DEFAULT_DTYPE, relu, sigmoid

BCE_EPS = 1e-7
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-7


@dataclass
class LayerParams:
    w: np.ndarray
    b: np.ndarray

    def copy(self) -> "LayerParams":
        return LayerParams(self.w.copy(), self.b.copy())


@dataclass
class ModelParams:
    """Ordered parameter blocks, one per conv/dense layer of the arch."""

    blocks: tuple[LayerParams, ...]

    def copy(self) -> "ModelParams":
        return ModelParams(tuple(b.copy() for b in self.blocks))

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            tuple(LayerParams(b.w.astype(dtype), b.b.astype(dtype)) for b in self.blocks)
        )

    @property
    def dtype(self):
        return self.blocks[0].w.dtype

    def count(self) -> int:
        return sum(b.w.size + b.b.size for b in self.blocks)


class Batch(NamedTuple):
    inputs: np.ndarray  # (N, 8, 8, C)
    labels: np.ndarray  # (N,) bool or {0,1}
    w_pos: float
    w_neg: float


@dataclass
class TrainConfig:
    max_epochs: int = 500
    early_stop_patience: int = 10
    initial_lr: float = 1e-3
    plateau_factor: float = 0.3
    plateau_patience: int = 5
    min_delta: float = 1e-4
    min_lr: float = 1e-6
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise ValueError("patience values must be >= 1")
        if self.initial_lr <= 0 or self.min_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class TrainReport:
    epochs_run: int
    best_epoch: int
    best_val_loss: float
    lr_history: list[float]
    train_loss: list[float]
    val_loss: list[float]
    val_metrics: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "lr_history": self.lr_history,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_metrics": self.val_metrics,
        }


def init_params(arch: ArchConfig, rng: Rng, dtype=DEFAULT_DTYPE) -> ModelParams:
    """Uniform init: fan-in scaled for ReLU layers, fan-average scaled for
    the sigmoid output layer; biases zero."""
    blocks = []
    for layer in shape_plan(arch):
        if layer.weight_shape is None:
            continue
        if layer.kind == "conv":
            fan_in = 9 * layer.in_shape[2]
            fan_out = 9 * layer.out_shape[2]
        else:
            fan_in, fan_out = layer.in_shape[0], layer.out_shape[0]
        if layer.activation == "sigmoid":
            limit = math.sqrt(6.0 / (fan_in + fan_out))
        else:
            limit = math.sqrt(6.0 / fan_in)
        n = int(np.prod(layer.weight_shape))
        w = np.array(rng.uniforms(n, -limit, limit), dtype=dtype).reshape(layer.weight_shape)
        b = np.zeros(layer.bias_shape, dtype=dtype)
        blocks.append(LayerParams(w, b))
    return ModelParams(tuple(blocks))


def _check_sample_shape(arch: ArchConfig, x: np.ndarray, batched: bool) -> None:
    expected = arch.input_shape
    got = x.shape[1:] if batched else x.shape
    if tuple(got) != expected:
        raise ValueError(f"input shape {tuple(got)} does not match arch {arch.name} {expected}")


def _forward_cache(arch: ArchConfig, params: ModelParams, x: np.ndarray):
    """Batched forward returning probabilities and per-layer tape."""
    kb = backend.active()
    tape = []
    a = np.ascontiguousarray(x, dtype=params.dtype)
    pi = 0
    for layer in shape_plan(arch):
        if layer.kind == "conv":
            blk = params.blocks[pi]
            pi += 1
            z = kb.conv2d_fwd(a, blk.w, blk.b)
            tape.append(("conv", a, z))
            a = relu(z)
        elif layer.kind == "pool":
            pooled, idx = kb.maxpool2_fwd(a)
            tape.append(("pool", idx, a.shape))
            a = pooled
        elif layer.kind == "flatten":
            tape.append(("flatten", a.shape, None))
            a = np.ascontiguousarray(a.reshape(a.shape[0], -1))
        else:  # dense
            blk = params.blocks[pi]
            pi += 1
            z = kb.dense_fwd(a, blk.w, blk.b)
            if layer.activation == "relu":
                tape.append(("dense_relu", a, z))
                a = relu(z)
            else:
                tape.append(("dense_sigmoid", a, None))
                a = z
    probs = sigmoid(a[:, 0])
    return probs, tape


def predict_batch(arch: ArchConfig, params: ModelParams, x: np.ndarray) -> np.ndarray:
    _check_sample_shape(arch, x, batched=True)
    probs, _ = _forward_cache(arch, params, x)
    return probs


def forward(arch: ArchConfig, params: ModelParams, sample: np.ndarray) -> float:
    """Probability of a distancing violation for one input sample."""
    _check_sample_shape(arch, sample, batched=False)
    probs, _ = _forward_cache(arch, params, sample[None])
    return float(probs[0])


def weighted_bce(p: float, y: int, w_pos: float, w_neg: float) -> float:
    """Class-weighted binary cross-entropy for a single prediction."""
    p = min(max(float(p), BCE_EPS), 1.0 - BCE_EPS)
    if y:
        return -w_pos * math.log(p)
    return -w_neg * math.log(1.0 - p)


def weighted_bce_mean(probs, labels, w_pos: float, w_neg: float) -> float:
    p = np.clip(np.asarray(probs, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(labels).astype(bool)
    w = np.where(y, w_pos, w_neg)
    losses = -w * np.where(y, np.log(p), np.log1p(-p))
    return float(losses.mean())


def _backward_from_tape(params: ModelParams, tape, dz_final: np.ndarray) -> ModelParams:
    kb = backend.active()
    grads: list[LayerParams | None] = [None] * len(params.blocks)
    pi = len(params.blocks)
    da = dz_final
    for entry in reversed(tape):
        kind = entry[0]
        if kind == "dense_sigmoid":
            _, a_in, _ = entry
            pi -= 1
            dx, dw, db = kb.dense_bwd(a_in, params.blocks[pi].w, da)
            grads[pi] = LayerParams(dw, db)
            da = dx
        elif kind == "dense_relu":
            _, a_in, z = entry
            pi -= 1
            dz = np.ascontiguousarray(da * (z > 0))
            dx, dw, db = kb.dense_bwd(a_in, params.blocks[pi].w, dz)
            grads[pi] = LayerParams(dw, db)
            da = dx
        elif kind == "flatten":
            _, in_shape, _ = entry
            da = np.ascontiguousarray(da.reshape(in_shape))
        elif kind == "pool":
            _, idx, in_shape = entry
            da = kb.maxpool2_bwd(np.ascontiguousarray(da), idx, in_shape[1], in_shape[2])
        else:  # conv
            _, a_in, z = entry
            pi -= 1
            dz = np.ascontiguousarray(da * (z > 0))
            dx, dw, db = kb.conv2d_bwd(a_in, params.blocks[pi].w, dz)
            grads[pi] = LayerParams(dw, db)
            da = dx
    return ModelParams(tuple(grads))  # type: ignore[arg-type]


def loss_and_grads(arch: ArchConfig, params: ModelParams, batch: Batch):
    """Mean weighted BCE over the batch and its gradient w.r.t. every block."""
    x = np.asarray(batch.inputs)
    y = np.asarray(batch.labels).astype(bool)
    if x.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    _check_sample_shape(arch, x, batched=True)
    probs, tape = _forward_cache(arch, params, x)
    loss = weighted_bce_mean(probs, y, batch.w_pos, batch.w_neg)
    w = np.where(y, batch.w_pos, batch.w_neg)
    dz = (w * (probs - y) / x.shape[0]).astype(params.dtype)
    grads = _backward_from_tape(params, tape, np.ascontiguousarray(dz[:, None]))
    return loss, grads


def backward(arch: ArchConfig, params: ModelParams, batch: Batch) -> ModelParams:
    """Gradient of the mean weighted BCE over a batch (same block layout)."""
    return loss_and_grads(arch, params, batch)[1]


@dataclass
class AdamState:
    step: int
    m: ModelParams
    v: ModelParams


def adam_init(params: ModelParams) -> AdamState:
    zeros = ModelParams(
        tuple(LayerParams(np.zeros_like(b.w), np.zeros_like(b.b)) for b in params.blocks)
    )
    return AdamState(0, zeros, zeros.copy())


def adam_step(
    params: ModelParams,
    grads: ModelParams,
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> tuple[ModelParams, AdamState]:
    """Bias-corrected Adam update; returns fresh params and state."""
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_blocks, new_m, new_v = [], [], []
    for blk, g, m, v in zip(params.blocks, grads.blocks, state.m.blocks, state.v.blocks):
        dtype = blk.w.dtype
        mw = beta1 * m.w + (1 - beta1) * g.w
        mb = beta1 * m.b + (1 - beta1) * g.b
        vw = beta2 * v.w + (1 - beta2) * np.square(g.w)
        vb = beta2 * v.b + (1 - beta2) * np.square(g.b)
        w = blk.w - (lr * (mw / c1) / (np.sqrt(vw / c2) + eps)).astype(dtype)
        b = blk.b - (lr * (mb / c1) / (np.sqrt(vb / c2) + eps)).astype(dtype)
        new_blocks.append(LayerParams(w.astype(dtype), b.astype(dtype)))
        new_m.append(LayerParams(mw, mb))
        new_v.append(LayerParams(vw, vb))
    return (
        ModelParams(tuple(new_blocks)),
        AdamState(t, ModelParams(tuple(new_m)), ModelParams(tuple(new_v))),
    )


def _safe_val_metrics(probs, labels) -> dict[str, float]:
    try:
        return metrics.summarize(probs, labels)
    except metrics.UndefinedMetricError:
        return {"bal_acc": float("nan"), "acc": float("nan"), "f1": float("nan"), "roc_auc": float("nan")}


def train_engine(
    arch: ArchConfig,
    split,
    config: TrainConfig,
    loss_grad_fn: Callable,
    predict_fn: Callable,
    start_params: ModelParams | None = None,
    dtype=DEFAULT_DTYPE,
) -> tuple[ModelParams, TrainReport]:
    """Shared epoch loop for float training and quantization-aware tuning.

    `split` needs train_x/train_y/val_x/val_y/w_pos/w_neg attributes.
    Restores the parameters of the strictly best validation loss; patience
    counters move on min_delta-significant improvements only.
    """
    train_x = np.ascontiguousarray(split.train_x, dtype=dtype)
    train_y = np.asarray(split.train_y).astype(bool)
    val_x = np.ascontiguousarray(split.val_x, dtype=dtype)
    val_y = np.asarray(split.val_y).astype(bool)
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise ValueError("training and validation subsets must be non-empty")
    _check_sample_shape(arch, train_x, batched=True)

    rng = Rng(config.seed)
    params = start_params.copy() if start_params is not None else init_params(
        arch, rng.derive("init"), dtype
    )
    state = adam_init(params)
    shuffle_rng = rng.derive("shuffle")

    lr = config.initial_lr
    best_loss = math.inf
    best_params = params.copy()
    best_epoch = 0
    patience_ref = math.inf
    plateau_wait = 0
    stop_wait = 0
    lr_history: list[float] = []
    train_curve: list[float] = []
    val_curve: list[float] = []
    epochs_run = 0

    n = train_x.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        epochs_run = epoch
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, config.batch_size):
            sel = order[lo : lo + config.batch_size]
            batch = Batch(train_x[sel], train_y[sel], split.w_pos, split.w_neg)
            loss, grads = loss_grad_fn(params, batch)
            params, state = adam_step(params, grads, state, lr)
            loss_sum += loss * len(sel)
        lr_history.append(lr)
        train_curve.append(loss_sum / n)
        val_probs = predict_fn(params, val_x)
        vloss = weighted_bce_mean(val_probs, val_y, split.w_pos, split.w_neg)
        val_curve.append(vloss)

        if vloss < best_loss:
            best_loss = vloss
            best_params = params.copy()
            best_epoch = epoch
        if vloss < patience_ref - config.min_delta:
            patience_ref = vloss
            plateau_wait = 0
            stop_wait = 0
        else:
            plateau_wait += 1
            stop_wait += 1
            if stop_wait >= config.early_stop_patience:
                break
            if plateau_wait >= config.plateau_patience:
                lr = max(lr * config.plateau_factor, config.min_lr)
                plateau_wait = 0

    final_probs = predict_fn(best_params, val_x)
    report = TrainReport(
        epochs_run=epochs_run,
        best_epoch=best_epoch,
        best_val_loss=best_loss,
        lr_history=lr_history,
        train_loss=train_curve,
        val_loss=val_curve,
        val_metrics=_safe_val_metrics(final_probs, val_y),
    )
    return best_params, report


def train(arch: ArchConfig, split, config: TrainConfig) -> tuple[ModelParams, TrainReport]:
    """Float training with the standard protocol (Adam, plateau LR decay,
    early stopping, best-epoch restore)."""
    return train_engine(
        arch,
        split,
        config,
        loss_grad_fn=lambda p, b: loss_and_grads(arch, p, b),
        predict_fn=lambda p, x: predict_batch(arch, p, x),
    )
