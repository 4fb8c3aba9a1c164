"""Complexity accounting and distribution analysis.

Per layer, a conventional multiplier-based convolution needs
``out_ch * out_h * out_w * in_ch * kernel_h * kernel_w`` multiply
cycles, while the shift unit touches every input element once
(``in_ch * height * width`` cycles) and emits ``precompute_count``
product terms per element.  For a stride-1 padding-preserving layer the
speedup is therefore exactly ``out_ch * kernel_h * kernel_w``.

Layer inventories are plain text files, one whitespace-delimited record
per layer: ``name C C~ Hf Wf H W stride pad`` (``#`` starts a comment).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import CodebookConfig, QuantizedWeightTensor
from .engine import run_network
from .errors import DomainError, InvalidConfigError, MalformedManifestError, ShapeMismatchError
from .tensorio import LayerSpec, Model


@dataclass(frozen=True)
class LayerCost:
    """Cycle/op counts for one layer; integer-exact."""

    name: str
    mult_cycles: int
    shift_alu_cycles: int
    shift_product_ops: int

    @property
    def speedup(self) -> float:
        return self.mult_cycles / self.shift_alu_cycles


@dataclass(frozen=True)
class ModelCost:
    per_layer: tuple[LayerCost, ...]
    mult_cycles: int
    shift_alu_cycles: int
    shift_product_ops: int

    @property
    def speedup(self) -> float:
        return self.mult_cycles / self.shift_alu_cycles


def layer_cost(spec: LayerSpec, config: CodebookConfig) -> LayerCost:
    mult = (spec.out_channels * spec.out_height * spec.out_width
            * spec.in_channels * spec.kernel_h * spec.kernel_w)
    alu = spec.in_channels * spec.height * spec.width
    return LayerCost(spec.name, mult, alu, config.precompute_count * alu)


def model_cost(specs: list[LayerSpec], config: CodebookConfig) -> ModelCost:
    if not specs:
        raise InvalidConfigError("layer list is empty")
    costs = tuple(layer_cost(spec, config) for spec in specs)
    return ModelCost(
        costs,
        sum(c.mult_cycles for c in costs),
        sum(c.shift_alu_cycles for c in costs),
        sum(c.shift_product_ops for c in costs),
    )


def parse_layer_specs(text: str, source: str = "<string>") -> list[LayerSpec]:
    specs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 9:
            raise MalformedManifestError(
                f"{source}:{lineno}: expected 9 fields (name C C~ Hf Wf H W stride pad), "
                f"got {len(fields)}"
            )
        name = fields[0]
        try:
            numbers = [int(v) for v in fields[1:]]
        except ValueError:
            raise MalformedManifestError(f"{source}:{lineno}: non-integer field in {line!r}")
        c, co, kh, kw, h, w, stride, pad = numbers
        try:
            specs.append(LayerSpec(name, c, co, kh, kw, h, w, stride, pad))
        except InvalidConfigError as exc:
            raise MalformedManifestError(f"{source}:{lineno}: {exc.message}") from exc
    if not specs:
        raise MalformedManifestError(f"{source}: no layer records found")
    return specs


def load_layer_specs(path) -> list[LayerSpec]:
    from pathlib import Path

    path = Path(path)
    return parse_layer_specs(path.read_text(), source=path.name)


@dataclass
class Histogram:
    """Uniform-bin histogram; counts always sum to the sample total."""

    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def centers(self) -> np.ndarray:
        return (self.edges[:-1] + self.edges[1:]) / 2.0

    def to_text(self) -> str:
        lines = [
            f"{float(center)!r} {int(count)}"
            for center, count in zip(self.centers, self.counts)
        ]
        return "\n".join(lines) + "\n"


def _histogram(values: np.ndarray, bins: int, value_range: tuple[float, float]) -> Histogram:
    if bins < 2:
        raise InvalidConfigError(f"bins must be >= 2, got {bins}")
    lo, hi = value_range
    if not lo < hi:
        raise InvalidConfigError(f"bad histogram range [{lo}, {hi}]")
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return Histogram(edges, counts.astype(np.int64))


def weight_histogram(
    weights: np.ndarray | QuantizedWeightTensor,
    bins: int = 101,
    value_range: tuple[float, float] = (-1.0, 1.0),
) -> Histogram:
    """Histogram of weights normalized to unit magnitude.

    Quantized tensors are binned over their decoded normalized values;
    float tensors are divided by max(abs).  All-zero tensors map to the
    zero bin (an odd default bin count keeps one bin centered there).
    """
    if isinstance(weights, QuantizedWeightTensor):
        from .codebook import dequantize_tensor

        scale = weights.scale
        values = dequantize_tensor(weights)
        normalized = values / scale if scale else values
    else:
        values = np.ascontiguousarray(weights, dtype=np.float64)
        if values.size == 0:
            raise DomainError("cannot histogram an empty tensor")
        peak = float(np.max(np.abs(values)))
        normalized = values / peak if peak else values
    return _histogram(normalized.ravel(), bins, value_range)


@dataclass
class DivergenceReport:
    """Elementwise output error between two models on shared inputs."""

    histogram: Histogram
    bias: float
    variance: float
    max_abs: float


def output_divergence(
    model_a: Model,
    model_b: Model,
    inputs: list[np.ndarray],
    bins: int = 101,
    value_range: tuple[float, float] | None = None,
    workers: int = 1,
) -> DivergenceReport:
    """Run both models on every input and histogram ``out_a - out_b``.

    Each model runs its natural path (shift datapath for quantized
    layers, float oracle for float layers).
    """
    if not inputs:
        raise DomainError("no inputs")
    diffs = []
    for x in inputs:
        out_a = run_network(model_a, x, workers=workers)
        out_b = run_network(model_b, x, workers=workers)
        if out_a.shape != out_b.shape:
            raise ShapeMismatchError(f"model outputs differ: {out_a.shape} vs {out_b.shape}")
        diffs.append((out_a - out_b).ravel())
    err = np.concatenate(diffs)
    peak = float(np.max(np.abs(err))) if err.size else 0.0
    if value_range is None:
        value_range = (-peak, peak) if peak > 0.0 else (-1.0, 1.0)
    hist = _histogram(err, bins, value_range)
    return DivergenceReport(hist, float(err.mean()), float(err.var()), peak)
