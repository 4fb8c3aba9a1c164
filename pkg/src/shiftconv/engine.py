"""Multiplierless convolution: precomputed shift/sign-flip terms plus adders.

For every input element the engine expands all nonzero union codewords
once: row ``k`` of the precompute buffer holds ``x * 2**(K - k)`` for
``k = 0..K`` (``K = max_shift``), followed by the sign-flipped rows.
Everything is kept as widened integers under the exponent bookkeeping
``e_buf = e_in - K``, so no precision is discarded and, with 8-bit
inputs and ``K <= 8``, every entry fits 16 signed bits.

Accumulation is input-stationary scatter: each input position's selected
terms are routed to every output position whose receptive field covers
it, which keeps the per-position buffer footprint at ``(P-1) * C``
entries while computing the full strided/padded convolution.  The
integer datapath performs only shifts, negations, selections and
additions; the weight scale and bias are applied once per output at
finalization, outside the datapath.

Bit-exact equivalence with :func:`conv_layer_reference` on dequantized
operands holds whenever the reference path itself incurs no float64
rounding, i.e. when ``scale``'s significand is narrow enough that every
product and partial sum stays within 53 bits (integer 8-bit inputs and
B=4 codebooks leave ~22 bits of scale headroom).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .codebook import CodebookConfig, QuantizedWeightTensor, dequantize_tensor
from .errors import (
    AccumulatorOverflowError,
    IndexOutOfRangeError,
    InputWidthError,
    ShapeMismatchError,
)
from .tensorio import FixedPointTensor, LayerSpec, Model, from_fixed_point, to_fixed_point

_ACC_LIMIT = 1 << 31
_TERM_BOUND = 1 << 15  # max accumulated terms for the checked 32-bit bound


@dataclass
class OpCounters:
    """Datapath operation accounting; ``multiplies`` must stay 0."""

    shifts: int = 0
    sign_flips: int = 0
    selects: int = 0
    adds: int = 0
    multiplies: int = 0
    buffer_builds: int = 0

    def merge(self, other: "OpCounters") -> None:
        self.shifts += other.shifts
        self.sign_flips += other.sign_flips
        self.selects += other.selects
        self.adds += other.adds
        self.multiplies += other.multiplies
        self.buffer_builds += other.buffer_builds


@dataclass
class PrecomputeBuffer:
    """All nonzero codeword products of one input column.

    ``entries[k]`` is ``column * 2**(K-k)`` for ``k = 0..K``; rows
    ``K+1..2K+1`` are their negations.  ``exponent`` is ``e_in - K``.
    """

    entries: np.ndarray
    max_shift: int
    exponent: int

    def row_for(self, stage: int, index: int) -> int | None:
        """Buffer row selected by a signed stage index (None selects zero)."""
        if index == 0:
            return None
        k = stage + abs(index) - 2
        return k if index > 0 else self.max_shift + 1 + k


def _check_input_width(data: np.ndarray) -> None:
    if data.size == 0:
        return
    lo, hi = int(data.min()), int(data.max())
    if lo < -128 or hi > 127:
        raise InputWidthError(f"input values span [{lo}, {hi}], need signed 8-bit")


def _expand_rows(data: np.ndarray, max_shift: int, counters: OpCounters | None) -> np.ndarray:
    """Shift/sign-flip expansion; the only 'products' on the datapath."""
    widened = data.astype(np.int64)
    shifts = (max_shift - np.arange(max_shift + 1, dtype=np.int64)).reshape(
        (max_shift + 1,) + (1,) * widened.ndim
    )
    positive = np.left_shift(widened[np.newaxis, ...], shifts)
    rows = np.concatenate([positive, np.negative(positive)], axis=0)
    if counters is not None:
        counters.shifts += max_shift * data.size
        counters.sign_flips += (max_shift + 1) * data.size
    return rows


def precompute_terms(
    column: np.ndarray,
    config: CodebookConfig,
    input_exponent: int = 0,
    counters: OpCounters | None = None,
) -> PrecomputeBuffer:
    """Expand one C-vector into its (P-1) x C product-term buffer."""
    col = np.ascontiguousarray(column, dtype=np.int64)
    if col.ndim != 1:
        raise ShapeMismatchError(f"input column must be 1-D, got shape {col.shape}")
    _check_input_width(col)
    rows = _expand_rows(col, config.max_shift, counters)
    if counters is not None:
        counters.buffer_builds += 1
    return PrecomputeBuffer(rows, config.max_shift, input_exponent - config.max_shift)


def _tap_slices(spec: LayerSpec, kh: int, kw: int):
    """Output/input slice pair receiving input tap (kh, kw), or None."""
    stride, pad = spec.stride, spec.padding
    oh_lo = max(0, (pad - kh + stride - 1) // stride)
    oh_hi = min(spec.out_height - 1, (spec.height - 1 + pad - kh) // stride)
    ow_lo = max(0, (pad - kw + stride - 1) // stride)
    ow_hi = min(spec.out_width - 1, (spec.width - 1 + pad - kw) // stride)
    if oh_lo > oh_hi or ow_lo > ow_hi:
        return None
    ih_lo = oh_lo * stride - pad + kh
    ih_hi = oh_hi * stride - pad + kh
    iw_lo = ow_lo * stride - pad + kw
    iw_hi = ow_hi * stride - pad + kw
    return (
        (slice(oh_lo, oh_hi + 1), slice(ow_lo, ow_hi + 1)),
        (slice(ih_lo, ih_hi + 1, stride), slice(iw_lo, iw_hi + 1, stride)),
    )


def _validate_shift_inputs(
    x: FixedPointTensor, weights: QuantizedWeightTensor, bias: np.ndarray | None, spec: LayerSpec
) -> None:
    if x.data.ndim != 3 or x.data.shape != (spec.in_channels, spec.height, spec.width):
        raise ShapeMismatchError(
            f"{spec.name}: input shape {x.data.shape} != "
            f"({spec.in_channels}, {spec.height}, {spec.width})"
        )
    if weights.shape != spec.weight_shape:
        raise ShapeMismatchError(
            f"{spec.name}: weight shape {weights.shape} != {spec.weight_shape}"
        )
    config = weights.config
    if weights.indices.size and int(np.max(np.abs(weights.indices))) > config.max_index:
        raise IndexOutOfRangeError(f"{spec.name}: weight index beyond {config.max_index}")
    _check_input_width(x.data)
    terms = spec.in_channels * config.shifts * spec.kernel_h * spec.kernel_w
    if terms > _TERM_BOUND:
        raise AccumulatorOverflowError(
            f"{spec.name}: {terms} accumulated terms exceed the checked bound {_TERM_BOUND}"
        )
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeMismatchError(f"{spec.name}: bias shape {bias.shape} != ({spec.out_channels},)")


def conv_layer_shift(
    x: FixedPointTensor,
    weights: QuantizedWeightTensor,
    bias: np.ndarray | None,
    spec: LayerSpec,
    workers: int = 1,
    counters: OpCounters | None = None,
) -> np.ndarray:
    """Convolve on the integer shift/add datapath; returns float64 output.

    Finalization per output channel: ``acc * 2**(e_in - K) * scale + bias``.
    """
    _validate_shift_inputs(x, weights, bias, spec)
    config = weights.config
    max_shift = config.max_shift
    buffer = _expand_rows(x.data, max_shift, counters)  # (P-1, C, H, W)
    if counters is not None:
        counters.buffer_builds += spec.height * spec.width

    indices = weights.indices.astype(np.int64)
    magnitudes = np.abs(indices)
    channel_arange = np.arange(spec.in_channels)
    taps = [
        (kh, kw, slices)
        for kh in range(spec.kernel_h)
        for kw in range(spec.kernel_w)
        if (slices := _tap_slices(spec, kh, kw)) is not None
    ]

    def run_channel(co: int) -> tuple[np.ndarray, OpCounters]:
        local = OpCounters()
        acc = np.zeros((spec.out_height, spec.out_width), dtype=np.int64)
        for stage in range(1, config.shifts + 1):
            stage_idx = indices[co, :, :, :, stage - 1]
            stage_mag = magnitudes[co, :, :, :, stage - 1]
            for kh, kw, (out_sl, in_sl) in taps:
                idx = stage_idx[:, kh, kw]
                if not idx.any():
                    continue
                k = stage + stage_mag[:, kh, kw] - 2
                row = np.where(idx > 0, k, max_shift + 1 + k)
                row = np.where(idx == 0, 0, row)
                terms = buffer[row, channel_arange]  # (C, H, W) gather
                terms[idx == 0] = 0  # multiplexer zero input
                plane = terms.sum(axis=0)
                acc[out_sl] += plane[in_sl]
                local.selects += terms.shape[0] * terms.shape[1] * terms.shape[2]
                local.adds += (terms.shape[0] - 1) * terms.shape[1] * terms.shape[2]
                local.adds += acc[out_sl].size
        peak = int(np.abs(acc).max()) if acc.size else 0
        if peak >= _ACC_LIMIT:
            raise AccumulatorOverflowError(f"{spec.name}: accumulator reached {peak}")
        return acc, local

    channels = range(spec.out_channels)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_channel, channels))
    else:
        results = [run_channel(co) for co in channels]

    out = np.empty((spec.out_channels, spec.out_height, spec.out_width), dtype=np.float64)
    factor = np.ldexp(float(weights.scale), x.exponent - max_shift)
    for co, (acc, local) in zip(channels, results):
        if counters is not None:
            counters.merge(local)
        plane = acc.astype(np.float64) * factor
        if bias is not None:
            plane = plane + np.float64(bias[co])
        out[co] = plane
    return out


def conv_layer_reference(
    x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None, spec: LayerSpec
) -> np.ndarray:
    """Direct float64 convolution with zero padding and fixed accumulation
    order (input channel major, then kernel row, then kernel column)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if x.shape != (spec.in_channels, spec.height, spec.width):
        raise ShapeMismatchError(
            f"{spec.name}: input shape {x.shape} != "
            f"({spec.in_channels}, {spec.height}, {spec.width})"
        )
    if weights.shape != spec.weight_shape:
        raise ShapeMismatchError(f"{spec.name}: weight shape {weights.shape} != {spec.weight_shape}")
    pad = spec.padding
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    oh, ow = spec.out_height, spec.out_width
    stride = spec.stride
    out = np.empty((spec.out_channels, oh, ow), dtype=np.float64)
    for co in range(spec.out_channels):
        acc = np.zeros((oh, ow), dtype=np.float64)
        for c in range(spec.in_channels):
            for kh in range(spec.kernel_h):
                for kw in range(spec.kernel_w):
                    window = padded[
                        c,
                        kh : kh + (oh - 1) * stride + 1 : stride,
                        kw : kw + (ow - 1) * stride + 1 : stride,
                    ]
                    acc += weights[co, c, kh, kw] * window
        if bias is not None:
            acc = acc + np.float64(bias[co])
        out[co] = acc
    return out


@dataclass
class PathComparison:
    """Layer-by-layer agreement between the shift datapath and the oracle."""

    per_layer_max_abs: list[float] = field(default_factory=list)
    final_diff: np.ndarray | None = None
    output: np.ndarray | None = None

    @property
    def max_abs(self) -> float:
        return max(self.per_layer_max_abs, default=0.0)

    @property
    def exact(self) -> bool:
        return self.max_abs == 0.0


def compare_network_paths(
    model: Model,
    x: np.ndarray | FixedPointTensor,
    activation_bits: int = 8,
    workers: int = 1,
    counters: OpCounters | None = None,
) -> PathComparison:
    """Run every quantized layer on both paths from shared activations.

    Both paths consume the same re-quantized activation at each layer, so
    any nonzero difference isolates a shift-datapath vs oracle divergence
    rather than activation quantization.  The network continues on the
    shift-path output.
    """
    model.validate()
    result = PathComparison()
    act: np.ndarray | FixedPointTensor = x
    for i, layer in enumerate(model.layers):
        spec = layer.spec
        if layer.quantized:
            fixed = act if isinstance(act, FixedPointTensor) else to_fixed_point(act, activation_bits)
            out = conv_layer_shift(fixed, layer.weights, layer.bias, spec,
                                   workers=workers, counters=counters)
            reference = conv_layer_reference(
                from_fixed_point(fixed), dequantize_tensor(layer.weights), layer.bias, spec
            )
        else:
            float_act = from_fixed_point(act) if isinstance(act, FixedPointTensor) else act
            out = conv_layer_reference(float_act, np.asarray(layer.weights), layer.bias, spec)
            reference = out
        diff = out - reference
        result.per_layer_max_abs.append(float(np.max(np.abs(diff))) if diff.size else 0.0)
        if i + 1 == len(model.layers):
            result.final_diff = diff
            result.output = out
        elif model.relu:
            out = np.maximum(out, 0.0)
        act = out
    return result


def run_network(
    model: Model,
    x: np.ndarray | FixedPointTensor,
    use_reference: bool = False,
    requantize: bool = True,
    activation_bits: int = 8,
    workers: int = 1,
    counters: OpCounters | None = None,
) -> np.ndarray:
    """Run all layers; ReLU between layers when ``model.relu`` is set.

    Quantized layers run on the shift datapath (activations re-quantized
    to ``activation_bits`` dynamic fixed point first).  ``use_reference``
    routes everything through the float oracle on dequantized weights;
    ``requantize=False`` keeps activations in float64, which also implies
    the reference path since the integer datapath needs fixed-point input.
    """
    model.validate()
    act: np.ndarray | FixedPointTensor = x
    for i, layer in enumerate(model.layers):
        spec = layer.spec
        reference = use_reference or not layer.quantized or not requantize
        if reference:
            float_act = from_fixed_point(act) if isinstance(act, FixedPointTensor) else act
            w = dequantize_tensor(layer.weights) if layer.quantized else np.asarray(layer.weights)
            out = conv_layer_reference(float_act, w, layer.bias, spec)
        else:
            if isinstance(act, FixedPointTensor):
                fixed = act
            else:
                fixed = to_fixed_point(act, activation_bits)
            out = conv_layer_shift(fixed, layer.weights, layer.bias, spec,
                                   workers=workers, counters=counters)
        if i + 1 < len(model.layers) and model.relu:
            out = np.maximum(out, 0.0)
        act = out
    return act
