"""8-bit affine quantization, quantization-aware fine-tuning and bit-exact
integer inference.

Scheme: signed int8 everywhere. Weights are per-tensor symmetric
(zero_point 0, range [-127, 127]); activations are per-tensor affine with
ranges frozen at calibration time; biases are int32 at scale
s_input * s_weight. Requantization of int32 accumulators uses a fixed-point
multiplier (int32 mantissa, right shift, rounding half away from zero), so
integer inference is bit-deterministic across platforms — the only float op
is the final sigmoid on the dequantized logit.

Worst-case accumulators are far inside int32 for every grid shape (a 3x3
conv over 64 channels tops out around 9*64*255*127 ~= 1.9e7); the kernels
still assert the bound.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import backend, nn
from .arch import ArchConfig, shape_plan
from .nn import Batch, LayerParams, ModelParams, TrainConfig, TrainReport
from .tensor import relu, sigmoid

SCALE_FLOOR = 1e-8
WEIGHT_QMAX = 127
DEFAULT_QAT_LR = 5e-4


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.where(v >= 0, np.floor(v + 0.5), np.ceil(v - 0.5))


@dataclass(frozen=True)
class QuantParams:
    scale: float
    zero_point: int

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if not -128 <= self.zero_point <= 127:
            raise ValueError("zero_point must be in [-128, 127]")

    def quantize(self, x: np.ndarray) -> np.ndarray:
        q = _round_half_away(np.asarray(x, dtype=np.float64) / self.scale) + self.zero_point
        return np.clip(q, -128, 127).astype(np.int8)

    def dequantize(self, q: np.ndarray) -> np.ndarray:
        return (np.asarray(q, dtype=np.float64) - self.zero_point) * self.scale

    def fake_quant(self, x: np.ndarray) -> np.ndarray:
        return self.dequantize(self.quantize(x)).astype(np.asarray(x).dtype)


def quantparams_from_range(rmin: float, rmax: float) -> tuple[QuantParams, bool]:
    """Affine params covering [rmin, rmax] extended to include zero.

    Returns (params, degenerate_flag); a degenerate (empty) range gets the
    1e-8 scale floor.
    """
    rmin = min(float(rmin), 0.0)
    rmax = max(float(rmax), 0.0)
    scale = (rmax - rmin) / 255.0
    degenerate = scale < SCALE_FLOOR
    if degenerate:
        scale = SCALE_FLOOR
    zp = int(_round_half_away(np.float64(-128.0 - rmin / scale)))
    zp = max(-128, min(127, zp))
    return QuantParams(scale, zp), degenerate


def weight_scale(w: np.ndarray) -> tuple[float, bool]:
    """Symmetric per-tensor weight scale max|w|/127, floored when all-zero."""
    m = float(np.max(np.abs(w))) if w.size else 0.0
    scale = m / WEIGHT_QMAX
    if scale < SCALE_FLOOR:
        return SCALE_FLOOR, True
    return scale, False


def quantize_multiplier(m: float) -> tuple[int, int]:
    """Fixed-point form of a positive real multiplier: m ~= m0 / 2**shift
    with m0 an int32 mantissa in [2^30, 2^31)."""
    if not m > 0 or not math.isfinite(m):
        raise ValueError("multiplier must be positive and finite")
    shift = 0
    while m * (1 << shift) < (1 << 30):
        shift += 1
        if shift > 62:
            raise ValueError("multiplier too small to represent")
    while m * (1 << shift) >= (1 << 31):
        if shift == 0:
            raise ValueError("multiplier too large to represent")
        shift -= 1
    m0 = int(_round_half_away(np.float64(m * (1 << shift))))
    if m0 == 1 << 31:
        m0 >>= 1
        shift -= 1
    return m0, shift


@dataclass(frozen=True)
class QuantLayer:
    """Quantization record for one conv or dense layer."""

    kind: str  # conv | dense
    relu: bool
    weight_q: np.ndarray  # int8
    bias_q: np.ndarray  # int32
    w_scale: float
    in_qp: QuantParams
    out_qp: QuantParams
    multiplier: int
    shift: int


@dataclass(frozen=True)
class QuantizedModel:
    arch: ArchConfig
    input_qp: QuantParams
    layers: tuple[QuantLayer, ...]
    degenerate: tuple[str, ...] = ()
    norm_mean: float = 0.0
    norm_std: float = 1.0

    @property
    def output_qp(self) -> QuantParams:
        return self.layers[-1].out_qp

    def payload_bytes(self) -> int:
        """Serialized weight+bias byte count (1 B/weight, 4 B/bias)."""
        return sum(l.weight_q.size + 4 * l.bias_q.size for l in self.layers)


@dataclass(frozen=True)
class ActivationRanges:
    """Frozen calibration result: input range plus one post-activation range
    per parameterized layer (the last one is the raw logit)."""

    input_qp: QuantParams
    layer_qps: tuple[QuantParams, ...]
    degenerate: tuple[str, ...] = ()


def observe_ranges(arch: ArchConfig, params: ModelParams, calib_x: np.ndarray) -> ActivationRanges:
    """Min/max activation ranges over calibration forward passes."""
    x = np.ascontiguousarray(calib_x, dtype=params.dtype)
    if x.ndim != 4 or x.shape[0] < 1:
        raise ValueError("need at least one calibration sample of shape (8,8,C)")
    kb = backend.active()
    degenerate: list[str] = []
    input_qp, degen = quantparams_from_range(float(x.min()), float(x.max()))
    if degen:
        degenerate.append("input")
    layer_qps: list[QuantParams] = []
    a = x
    pi = 0
    for layer in shape_plan(arch):
        if layer.kind == "conv":
            blk = params.blocks[pi]
            pi += 1
            a = relu(kb.conv2d_fwd(a, blk.w, blk.b))
        elif layer.kind == "pool":
            a, _ = kb.maxpool2_fwd(a)
            continue
        elif layer.kind == "flatten":
            a = np.ascontiguousarray(a.reshape(a.shape[0], -1))
            continue
        else:
            blk = params.blocks[pi]
            pi += 1
            a = kb.dense_fwd(a, blk.w, blk.b)
            if layer.activation == "relu":
                a = relu(a)
        qp, degen = quantparams_from_range(float(a.min()), float(a.max()))
        if degen:
            degenerate.append(f"layer{len(layer_qps)}")
        layer_qps.append(qp)
    return ActivationRanges(input_qp, tuple(layer_qps), tuple(degenerate))


def build_quantized(
    arch: ArchConfig,
    params: ModelParams,
    ranges: ActivationRanges,
    norm_mean: float = 0.0,
    norm_std: float = 1.0,
) -> QuantizedModel:
    """Quantize float parameters against frozen activation ranges."""
    layers: list[QuantLayer] = []
    degenerate = list(ranges.degenerate)
    in_qp = ranges.input_qp
    pi = 0
    qi = 0
    for layer in shape_plan(arch):
        if layer.kind not in ("conv", "dense"):
            continue
        blk = params.blocks[pi]
        pi += 1
        out_qp = ranges.layer_qps[qi]
        qi += 1
        s_w, degen = weight_scale(blk.w)
        if degen:
            degenerate.append(f"weights{pi - 1}")
        wq = np.clip(_round_half_away(blk.w / s_w), -WEIGHT_QMAX, WEIGHT_QMAX).astype(np.int8)
        bias_scale = in_qp.scale * s_w
        bq = np.clip(
            _round_half_away(blk.b.astype(np.float64) / bias_scale), -(2**31), 2**31 - 1
        ).astype(np.int32)
        m0, shift = quantize_multiplier(bias_scale / out_qp.scale)
        layers.append(
            QuantLayer(
                kind=layer.kind,
                relu=layer.activation == "relu",
                weight_q=wq,
                bias_q=bq,
                w_scale=s_w,
                in_qp=in_qp,
                out_qp=out_qp,
                multiplier=m0,
                shift=shift,
            )
        )
        in_qp = out_qp
    return QuantizedModel(
        arch=arch,
        input_qp=ranges.input_qp,
        layers=tuple(layers),
        degenerate=tuple(dict.fromkeys(degenerate)),
        norm_mean=norm_mean,
        norm_std=norm_std,
    )


def calibrate(
    model: ModelParams,
    arch: ArchConfig,
    calib_samples: np.ndarray,
    norm_mean: float = 0.0,
    norm_std: float = 1.0,
) -> QuantizedModel:
    """Post-training quantization: observe ranges, then quantize."""
    ranges = observe_ranges(arch, model, calib_samples)
    return build_quantized(arch, model, ranges, norm_mean, norm_std)


def _dequant_params(qmodel: QuantizedModel, dtype=np.float32) -> ModelParams:
    blocks = []
    for l in qmodel.layers:
        w = (l.weight_q.astype(np.float64) * l.w_scale).astype(dtype)
        b = (l.bias_q.astype(np.float64) * (l.in_qp.scale * l.w_scale)).astype(dtype)
        blocks.append(LayerParams(w, b))
    return ModelParams(tuple(blocks))


def _fake_quant_infer(qmodel: QuantizedModel, x: np.ndarray):
    """Fake-quant forward; returns (int8 logit indices, probabilities)."""
    kb = backend.active()
    params = _dequant_params(qmodel)
    a = qmodel.input_qp.fake_quant(np.ascontiguousarray(x, dtype=np.float32))
    li = 0
    for layer in shape_plan(qmodel.arch):
        if layer.kind == "pool":
            a, _ = kb.maxpool2_fwd(a)
        elif layer.kind == "flatten":
            a = np.ascontiguousarray(a.reshape(a.shape[0], -1))
        else:
            ql = qmodel.layers[li]
            blk = params.blocks[li]
            li += 1
            if layer.kind == "conv":
                a = kb.conv2d_fwd(a, blk.w, blk.b)
            else:
                a = kb.dense_fwd(a, blk.w, blk.b)
            if ql.relu:
                a = relu(a)
            if layer.activation == "sigmoid":
                q_logit = ql.out_qp.quantize(a[:, 0])
                logit = ql.out_qp.dequantize(q_logit)
                return q_logit, sigmoid(logit)
            a = ql.out_qp.fake_quant(a)
    raise AssertionError("arch plan ended without a sigmoid layer")


def fake_quant_forward_batch(qmodel: QuantizedModel, x: np.ndarray) -> np.ndarray:
    """Float forward with every weight and activation round-tripped through
    its quantizer; mirrors the deployed integer graph."""
    return _fake_quant_infer(qmodel, x)[1]


def fake_quant_forward(qmodel: QuantizedModel, sample: np.ndarray) -> float:
    if tuple(sample.shape) != qmodel.arch.input_shape:
        raise ValueError(
            f"sample shape {tuple(sample.shape)} does not match arch "
            f"{qmodel.arch.name} {qmodel.arch.input_shape}"
        )
    return float(fake_quant_forward_batch(qmodel, sample[None])[0])


def quantize_input(qmodel: QuantizedModel, x: np.ndarray) -> np.ndarray:
    return qmodel.input_qp.quantize(x)


class IntInference(NamedTuple):
    q_output: np.ndarray  # int8 logits-domain output
    probability: np.ndarray
    macs: int


def int_infer_batch(qmodel: QuantizedModel, xq: np.ndarray) -> IntInference:
    """Integer-only inference on pre-quantized int8 input.

    All conv/dense math runs in int32 accumulators with fixed-point
    requantization; the final sigmoid is float on the dequantized logit.
    """
    if xq.dtype != np.int8:
        raise ValueError("int_infer expects an int8 input (use quantize_input)")
    kb = backend.active()
    a = np.ascontiguousarray(xq)
    macs = 0
    li = 0
    for layer in shape_plan(qmodel.arch):
        if layer.kind == "pool":
            a = kb.maxpool2_int8(a)
        elif layer.kind == "flatten":
            a = np.ascontiguousarray(a.reshape(a.shape[0], -1))
        else:
            ql = qmodel.layers[li]
            li += 1
            fn = kb.conv2d_int8 if layer.kind == "conv" else kb.dense_int8
            a, m = fn(
                a,
                ql.weight_q,
                ql.bias_q,
                ql.in_qp.zero_point,
                ql.multiplier,
                ql.shift,
                ql.out_qp.zero_point,
                ql.relu,
            )
            macs += m
    q_logit = a[:, 0]
    logit = qmodel.output_qp.dequantize(q_logit)
    return IntInference(q_logit, sigmoid(logit), macs)


def int_infer(qmodel: QuantizedModel, int8_input: np.ndarray) -> IntInference:
    """Single-sample integer inference -> (int8 logit, probability, MACs)."""
    if tuple(int8_input.shape) != qmodel.arch.input_shape:
        raise ValueError(
            f"input shape {tuple(int8_input.shape)} does not match arch "
            f"{qmodel.arch.name} {qmodel.arch.input_shape}"
        )
    q, p, macs = int_infer_batch(qmodel, int8_input[None])
    return IntInference(q[0], float(p[0]), macs)


def int_predict(qmodel: QuantizedModel, x: np.ndarray) -> np.ndarray:
    """Float input -> int8 pipeline probabilities (quantize + int_infer)."""
    return int_infer_batch(qmodel, quantize_input(qmodel, x)).probability


def quantization_parity(qmodel: QuantizedModel, x: np.ndarray) -> dict[str, float]:
    """Compare the integer path against the fake-quant reference.

    Returns the fraction of samples whose logits agree within one output
    quantization step and the fraction of agreeing 0.5-threshold decisions.
    """
    fq_logits, fq_probs = _fake_quant_infer(qmodel, x)
    res = int_infer_batch(qmodel, quantize_input(qmodel, x))
    within = np.abs(fq_logits.astype(np.int32) - res.q_output.astype(np.int32)) <= 1
    agree = (fq_probs >= 0.5) == (res.probability >= 0.5)
    return {
        "within_one_step": float(np.mean(within)),
        "decision_agreement": float(np.mean(agree)),
    }


def _fq_weights(params: ModelParams) -> ModelParams:
    """Round-trip every weight tensor through its current symmetric scale
    (biases pass through during training)."""
    blocks = []
    for blk in params.blocks:
        s, _ = weight_scale(blk.w)
        wq = np.clip(_round_half_away(blk.w.astype(np.float64) / s), -WEIGHT_QMAX, WEIGHT_QMAX)
        blocks.append(LayerParams((wq * s).astype(blk.w.dtype), blk.b))
    return ModelParams(tuple(blocks))


def _fq_forward_cache(arch: ArchConfig, params: ModelParams, ranges: ActivationRanges, x):
    """Fake-quant forward with a backward tape; activations on the tape are
    the round-tripped values, which realizes the straight-through estimator."""
    kb = backend.active()
    qparams = _fq_weights(params)
    tape = []
    a = ranges.input_qp.fake_quant(np.ascontiguousarray(x, dtype=params.dtype))
    pi = 0
    for layer in shape_plan(arch):
        if layer.kind == "conv":
            blk = qparams.blocks[pi]
            qp = ranges.layer_qps[pi]
            pi += 1
            z = kb.conv2d_fwd(a, blk.w, blk.b)
            tape.append(("conv", a, z))
            a = qp.fake_quant(relu(z))
        elif layer.kind == "pool":
            pooled, idx = kb.maxpool2_fwd(a)
            tape.append(("pool", idx, a.shape))
            a = pooled
        elif layer.kind == "flatten":
            tape.append(("flatten", a.shape, None))
            a = np.ascontiguousarray(a.reshape(a.shape[0], -1))
        else:
            blk = qparams.blocks[pi]
            qp = ranges.layer_qps[pi]
            pi += 1
            z = kb.dense_fwd(a, blk.w, blk.b)
            if layer.activation == "relu":
                tape.append(("dense_relu", a, z))
                a = qp.fake_quant(relu(z))
            else:
                tape.append(("dense_sigmoid", a, None))
                a = qp.fake_quant(z)
    probs = sigmoid(a[:, 0])
    return probs, tape, qparams


def _fq_loss_and_grads(arch: ArchConfig, params: ModelParams, ranges: ActivationRanges, batch: Batch):
    x = np.asarray(batch.inputs)
    y = np.asarray(batch.labels).astype(bool)
    probs, tape, qparams = _fq_forward_cache(arch, params, ranges, x)
    loss = nn.weighted_bce_mean(probs, y, batch.w_pos, batch.w_neg)
    w = np.where(y, batch.w_pos, batch.w_neg)
    dz = (w * (probs - y) / x.shape[0]).astype(params.dtype)
    grads = nn._backward_from_tape(qparams, tape, np.ascontiguousarray(dz[:, None]))
    return loss, grads


def make_qat_config(base: TrainConfig, initial_lr: float = DEFAULT_QAT_LR) -> TrainConfig:
    """Same protocol as float training with the QAT starting LR."""
    return dataclasses.replace(base, initial_lr=initial_lr)


def qat_finetune(
    arch: ArchConfig,
    start_params: ModelParams,
    split,
    config: TrainConfig,
    norm_mean: float = 0.0,
    norm_std: float = 1.0,
) -> tuple[ModelParams, TrainReport, QuantizedModel]:
    """Quantization-aware fine-tuning from converged float weights.

    Activation ranges are calibrated once on the training subset and frozen;
    weight scales track the weights as they move. Returns the tuned float
    params, the training report and the final quantized model.
    """
    ranges = observe_ranges(arch, start_params, np.asarray(split.train_x))
    params, report = nn.train_engine(
        arch,
        split,
        config,
        loss_grad_fn=lambda p, b: _fq_loss_and_grads(arch, p, ranges, b),
        predict_fn=lambda p, x: _fq_forward_cache(arch, p, ranges, x)[0],
        start_params=start_params,
    )
    qmodel = build_quantized(arch, params, ranges, norm_mean, norm_std)
    return params, report, qmodel
