"""Workflow functions behind the HTTP endpoints.

The CLI calls these directly for local runs; the FastAPI app wraps them
one-to-one, so both front ends share a single code path.  All model I/O
round-trips through the on-disk formats in a temporary directory, which
keeps the wire formats and file formats identical by construction.
"""

from __future__ import annotations

import base64
import binascii
import tempfile
from pathlib import Path

import numpy as np

from ..analyzer import _histogram, model_cost, parse_layer_specs, weight_histogram
from ..codebook import CodebookConfig, dequantize_tensor, empirical_distortion, quantize_tensor
from ..engine import OpCounters, compare_network_paths, run_network
from ..errors import DomainError, FormatError, MalformedManifestError
from ..tensorio import (
    FixedPointTensor,
    Model,
    ModelLayer,
    load_model,
    save_model,
    tensor_from_bytes,
    tensor_to_bytes,
)
from . import schemas


def encode_bytes(payload: bytes) -> str:
    return base64.b64encode(payload).decode("ascii")


def decode_bytes(payload: str, label: str) -> bytes:
    try:
        return base64.b64decode(payload.encode("ascii"), validate=True)
    except (binascii.Error, ValueError) as exc:
        raise FormatError(f"{label}: invalid base64 payload") from exc


def bundle_to_model(bundle: dict[str, str], manifest: str) -> Model:
    if manifest not in bundle:
        raise MalformedManifestError(f"bundle has no manifest entry {manifest!r}")
    with tempfile.TemporaryDirectory(prefix="shiftconv-") as tmp:
        root = Path(tmp)
        for name, payload in bundle.items():
            target = root / name
            if not target.resolve().is_relative_to(root.resolve()):
                raise MalformedManifestError(f"bundle entry escapes the bundle: {name!r}")
            target.write_bytes(decode_bytes(payload, name))
        return load_model(root / manifest)


def model_to_bundle(model: Model, manifest: str) -> dict[str, str]:
    with tempfile.TemporaryDirectory(prefix="shiftconv-") as tmp:
        root = Path(tmp)
        save_model(model, root / manifest)
        return {
            path.name: encode_bytes(path.read_bytes())
            for path in sorted(root.iterdir())
        }


def _float_weights(layer: ModelLayer) -> np.ndarray:
    if layer.quantized:
        return dequantize_tensor(layer.weights)
    return np.asarray(layer.weights, dtype=np.float64)


def quantize_op(request: schemas.QuantizeRequest) -> schemas.QuantizeResponse:
    config = CodebookConfig(request.shifts, request.bits)
    source = bundle_to_model(request.bundle, request.manifest)
    reports = []
    layers = []
    for layer in source.layers:
        weights = _float_weights(layer)
        quantized = quantize_tensor(weights, config)
        distortion = empirical_distortion(weights, config) if quantized.scale else 0.0
        layers.append(ModelLayer(layer.spec, quantized, layer.bias))
        reports.append(
            schemas.LayerQuantReport(
                layer=layer.spec.name, scale=quantized.scale, distortion=distortion
            )
        )
    result = Model(layers, config, source.relu)
    return schemas.QuantizeResponse(
        bundle=model_to_bundle(result, request.manifest),
        manifest=request.manifest,
        layers=reports,
    )


def infer_op(request: schemas.InferRequest) -> schemas.InferResponse:
    model = bundle_to_model(request.bundle, request.manifest)
    x = tensor_from_bytes(decode_bytes(request.input_tensor, "input tensor"))
    output = run_network(
        model,
        x,
        use_reference=request.float_oracle,
        requantize=request.requantize,
        workers=request.workers,
    )
    return schemas.InferResponse(output_tensor=encode_bytes(tensor_to_bytes(output)))


def compare_op(request: schemas.CompareRequest) -> schemas.CompareResponse:
    model = bundle_to_model(request.bundle, request.manifest)
    if not request.inputs:
        raise DomainError("no inputs")
    counters = OpCounters()
    per_input = []
    final_diffs = []
    for i, payload in enumerate(request.inputs):
        x = tensor_from_bytes(decode_bytes(payload, f"input {i}"))
        comparison = compare_network_paths(model, x, workers=request.workers, counters=counters)
        per_input.append(comparison.max_abs)
        final_diffs.append(comparison.final_diff.ravel())
    err = np.concatenate(final_diffs)
    peak = float(np.max(np.abs(err))) if err.size else 0.0
    hist = _histogram(err, request.bins, (-peak, peak) if peak > 0.0 else (-1.0, 1.0))
    max_abs = max(per_input, default=0.0)
    return schemas.CompareResponse(
        max_abs_error=max_abs,
        exact=max_abs == 0.0 and counters.multiplies == 0,
        per_input_max_abs=per_input,
        op_counts=schemas.OpCountReport(
            shifts=counters.shifts,
            sign_flips=counters.sign_flips,
            selects=counters.selects,
            adds=counters.adds,
            multiplies=counters.multiplies,
            buffer_builds=counters.buffer_builds,
        ),
        histogram=schemas.HistogramReport(
            centers=[float(c) for c in hist.centers], counts=[int(c) for c in hist.counts]
        ),
        bias=float(err.mean()),
        variance=float(err.var()),
    )


def analyze_op(request: schemas.AnalyzeRequest) -> schemas.AnalyzeResponse:
    config = CodebookConfig(request.shifts, request.bits)
    specs = parse_layer_specs(request.layers_text, source=request.source)
    cost = model_cost(specs, config)
    rows = [
        schemas.LayerCostReport(
            name=c.name,
            mult_cycles=c.mult_cycles,
            shift_alu_cycles=c.shift_alu_cycles,
            shift_product_ops=c.shift_product_ops,
            speedup=c.speedup,
        )
        for c in cost.per_layer
    ]
    return schemas.AnalyzeResponse(
        rows=rows,
        total_mult_cycles=cost.mult_cycles,
        total_shift_alu_cycles=cost.shift_alu_cycles,
        total_shift_product_ops=cost.shift_product_ops,
        speedup=cost.speedup,
    )


def histogram_op(request: schemas.HistogramRequest) -> schemas.HistogramResponse:
    if (request.tensor is None) == (request.bundle is None):
        raise DomainError("provide exactly one of tensor or bundle")
    if request.tensor is not None:
        loaded = tensor_from_bytes(decode_bytes(request.tensor, "tensor"))
        if isinstance(loaded, FixedPointTensor):
            from ..tensorio import from_fixed_point

            loaded = from_fixed_point(loaded)
        hist = weight_histogram(loaded, bins=request.bins)
    else:
        model = bundle_to_model(request.bundle, request.manifest)
        normalized = []
        for layer in model.layers:
            weights = _float_weights(layer)
            peak = float(np.max(np.abs(weights)))
            normalized.append((weights / peak if peak else weights).ravel())
        hist = _histogram(np.concatenate(normalized), request.bins, (-1.0, 1.0))
    return schemas.HistogramResponse(
        histogram=schemas.HistogramReport(
            centers=[float(c) for c in hist.centers], counts=[int(c) for c in hist.counts]
        ),
        total=hist.total,
    )
