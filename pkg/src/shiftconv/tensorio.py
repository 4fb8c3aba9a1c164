"""Tensor/model containers, dynamic fixed point, and the on-disk formats.

Tensor files
    ``SHCT`` magic, version byte, dtype code (0 = float32, 1 = fixed
    point), bits byte (0 for float), rank byte, little-endian u32
    extents, little-endian i16 exponent (0 for float), then the
    row-major payload: float32 LE for float tensors, int16 LE for fixed
    point.

Model files
    A plain-text manifest naming the global quantizer config and one
    block per layer (geometry, bias flag, scale as a hex float for
    bit-exact round trips, and blob file names relative to the
    manifest).  Weight indices are packed one signed byte per index;
    biases are raw float32 LE.  Float (unquantized) layers store their
    weights as a tensor file instead of indices.
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import CodebookConfig, QuantizedWeightTensor
from .errors import (
    BadMagicError,
    BlobLengthMismatchError,
    DomainError,
    IndexOutOfRangeError,
    InvalidConfigError,
    MalformedManifestError,
    ShapeMismatchError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)

TENSOR_MAGIC = b"SHCT"
TENSOR_VERSION = 1
MODEL_FORMAT_VERSION = 1
_DTYPE_FLOAT32 = 0
_DTYPE_FIXED = 1

_NAME_RE = re.compile(r"^[A-Za-z0-9_.:/-]+$")


@dataclass
class FixedPointTensor:
    """Integer tensor with one shared power-of-two exponent.

    Real value of an element is ``data * 2**exponent``.  Every stored
    integer must fit ``bits`` signed bits.
    """

    data: np.ndarray
    bits: int = 8
    exponent: int = -7

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.int32)
        lo, hi = -(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1
        if self.data.size and (int(self.data.min()) < lo or int(self.data.max()) > hi):
            raise DomainError(f"stored integers exceed {self.bits} signed bits")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def to_fixed_point(values: np.ndarray, bits: int = 8) -> FixedPointTensor:
    """Convert to dynamic fixed point with a per-tensor exponent.

    The exponent is ``ceil(log2(max(abs(values)))) - (bits - 1)`` so the
    max-magnitude element maps to full scale (clamping the single +max
    element by one step, which buys an extra bit for everything else).
    Rounding is half-away-from-zero.
    """
    if not 2 <= bits <= 16:
        raise InvalidConfigError(f"invalid bits {bits}, need 2..16")
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise DomainError("cannot convert non-finite values to fixed point")
    peak = float(np.max(np.abs(arr))) if arr.size else 0.0
    if peak == 0.0:
        exponent = -(bits - 1)
        return FixedPointTensor(np.zeros(arr.shape, dtype=np.int32), bits, exponent)
    mant, exp = math.frexp(peak)
    ceil_log2 = exp - 1 if mant == 0.5 else exp
    exponent = ceil_log2 - (bits - 1)
    scaled = np.ldexp(arr, -exponent)
    stored = np.where(scaled >= 0.0, np.floor(scaled + 0.5), np.ceil(scaled - 0.5))
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    stored = np.clip(stored, lo, hi).astype(np.int32)
    return FixedPointTensor(stored, bits, exponent)


def from_fixed_point(tensor: FixedPointTensor) -> np.ndarray:
    """Exact reconstruction ``data * 2**exponent`` as float64."""
    return np.ldexp(tensor.data.astype(np.float64), tensor.exponent)


@dataclass(frozen=True)
class LayerSpec:
    """Convolution geometry; drives both execution and cycle counting."""

    name: str
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    height: int
    width: int
    stride: int = 1
    padding: int = 0
    has_bias: bool = True

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise InvalidConfigError(f"bad layer name {self.name!r}")
        for label, value in (
            ("in_channels", self.in_channels), ("out_channels", self.out_channels),
            ("kernel_h", self.kernel_h), ("kernel_w", self.kernel_w),
            ("height", self.height), ("width", self.width), ("stride", self.stride),
        ):
            if value < 1:
                raise InvalidConfigError(f"{self.name}: {label} must be >= 1, got {value}")
        if self.padding < 0:
            raise InvalidConfigError(f"{self.name}: padding must be >= 0")
        for label, extent, kernel in (("height", self.height, self.kernel_h),
                                      ("width", self.width, self.kernel_w)):
            span = extent + 2 * self.padding - kernel
            if span < 0 or span % self.stride != 0:
                raise InvalidConfigError(
                    f"{self.name}: {label} {extent} is not stride-compatible with "
                    f"kernel {kernel}, stride {self.stride}, padding {self.padding}"
                )

    @property
    def out_height(self) -> int:
        return (self.height + 2 * self.padding - self.kernel_h) // self.stride + 1

    @property
    def out_width(self) -> int:
        return (self.width + 2 * self.padding - self.kernel_w) // self.stride + 1

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)


@dataclass
class ModelLayer:
    """One convolution layer: spec plus float or quantized weights."""

    spec: LayerSpec
    weights: np.ndarray | QuantizedWeightTensor
    bias: np.ndarray | None = None

    @property
    def quantized(self) -> bool:
        return isinstance(self.weights, QuantizedWeightTensor)

    def validate(self) -> None:
        shape = self.weights.shape if self.quantized else np.asarray(self.weights).shape
        if tuple(shape) != self.spec.weight_shape:
            raise ShapeMismatchError(
                f"{self.spec.name}: weight shape {tuple(shape)} != {self.spec.weight_shape}"
            )
        if self.spec.has_bias:
            if self.bias is None or self.bias.shape != (self.spec.out_channels,):
                raise ShapeMismatchError(f"{self.spec.name}: bias must have shape "
                                         f"({self.spec.out_channels},)")
        elif self.bias is not None:
            raise ShapeMismatchError(f"{self.spec.name}: bias present but has_bias is false")


@dataclass
class Model:
    """Ordered convolution layers plus the global quantizer config."""

    layers: list[ModelLayer] = field(default_factory=list)
    config: CodebookConfig | None = None
    relu: bool = True

    def validate(self) -> None:
        if not self.layers:
            raise MalformedManifestError("model has no layers")
        for layer in self.layers:
            layer.validate()
            if layer.quantized:
                if self.config is None or layer.weights.config != self.config:
                    raise MalformedManifestError(
                        f"{layer.spec.name}: quantized layer does not match the model config"
                    )
        for prev, cur in zip(self.layers, self.layers[1:]):
            if cur.spec.in_channels != prev.spec.out_channels:
                raise ShapeMismatchError(
                    f"{cur.spec.name}: in_channels {cur.spec.in_channels} != previous "
                    f"out_channels {prev.spec.out_channels}"
                )
            if (cur.spec.height, cur.spec.width) != (prev.spec.out_height, prev.spec.out_width):
                raise ShapeMismatchError(
                    f"{cur.spec.name}: input {cur.spec.height}x{cur.spec.width} != previous "
                    f"output {prev.spec.out_height}x{prev.spec.out_width}"
                )


# --------------------------------------------------------------------------
# tensor files


def tensor_to_bytes(tensor: np.ndarray | FixedPointTensor) -> bytes:
    if isinstance(tensor, FixedPointTensor):
        dtype, bits, exponent = _DTYPE_FIXED, tensor.bits, tensor.exponent
        payload = tensor.data.astype("<i2").tobytes()
        shape = tensor.shape
    else:
        arr = np.ascontiguousarray(tensor, dtype=np.float64)
        dtype, bits, exponent = _DTYPE_FLOAT32, 0, 0
        payload = arr.astype("<f4").tobytes()
        shape = arr.shape
    if len(shape) > 4:
        raise ShapeMismatchError(f"tensors are at most rank 4, got rank {len(shape)}")
    header = TENSOR_MAGIC + struct.pack("<BBBB", TENSOR_VERSION, dtype, bits, len(shape))
    header += b"".join(struct.pack("<I", extent) for extent in shape)
    header += struct.pack("<h", exponent)
    return header + payload


def tensor_from_bytes(blob: bytes) -> np.ndarray | FixedPointTensor:
    if len(blob) < 8 or blob[:4] != TENSOR_MAGIC:
        raise BadMagicError("not a tensor file (missing SHCT magic)")
    version, dtype, bits, rank = struct.unpack_from("<BBBB", blob, 4)
    if version != TENSOR_VERSION:
        raise UnsupportedVersionError(f"tensor format version {version}")
    offset = 8
    if len(blob) < offset + 4 * rank + 2:
        raise TruncatedPayloadError("tensor header ends early")
    shape = tuple(struct.unpack_from("<I", blob, offset + 4 * i)[0] for i in range(rank))
    offset += 4 * rank
    (exponent,) = struct.unpack_from("<h", blob, offset)
    offset += 2
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    if dtype == _DTYPE_FLOAT32:
        expected = count * 4
        if len(blob) - offset != expected:
            raise TruncatedPayloadError(f"expected {expected} payload bytes, got {len(blob) - offset}")
        data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        return data.astype(np.float64).reshape(shape)
    if dtype == _DTYPE_FIXED:
        expected = count * 2
        if len(blob) - offset != expected:
            raise TruncatedPayloadError(f"expected {expected} payload bytes, got {len(blob) - offset}")
        data = np.frombuffer(blob, dtype="<i2", count=count, offset=offset)
        return FixedPointTensor(data.astype(np.int32).reshape(shape), bits, exponent)
    raise UnsupportedVersionError(f"unknown dtype code {dtype}")


def save_tensor(tensor: np.ndarray | FixedPointTensor, path: str | Path) -> None:
    Path(path).write_bytes(tensor_to_bytes(tensor))


def load_tensor(path: str | Path) -> np.ndarray | FixedPointTensor:
    return tensor_from_bytes(Path(path).read_bytes())


# --------------------------------------------------------------------------
# model manifest + blobs


def _format_manifest(model: Model) -> tuple[str, dict[str, bytes]]:
    model.validate()
    lines = [f"shiftconv-model {MODEL_FORMAT_VERSION}", f"relu {int(model.relu)}"]
    if model.config is not None:
        lines.append(f"shifts {model.config.shifts}")
        lines.append(f"index-bits {model.config.bits}")
    lines.append(f"layers {len(model.layers)}")
    blobs: dict[str, bytes] = {}
    for i, layer in enumerate(model.layers):
        spec = layer.spec
        lines.append("")
        lines.append(f"layer {spec.name}")
        lines.append(
            "geometry "
            f"{spec.in_channels} {spec.out_channels} {spec.kernel_h} {spec.kernel_w} "
            f"{spec.height} {spec.width} {spec.stride} {spec.padding}"
        )
        lines.append(f"bias {int(spec.has_bias)}")
        if layer.quantized:
            name = f"layer{i}.idx"
            blobs[name] = layer.weights.indices.astype(np.int8).tobytes()
            lines.append("kind quantized")
            lines.append(f"scale {float(layer.weights.scale).hex()}")
            lines.append(f"indices {name}")
        else:
            name = f"layer{i}.wts"
            blobs[name] = tensor_to_bytes(np.asarray(layer.weights, dtype=np.float64))
            lines.append("kind float")
            lines.append(f"weights {name}")
        if spec.has_bias:
            bias_name = f"layer{i}.bias"
            blobs[bias_name] = np.ascontiguousarray(layer.bias, dtype="<f4").tobytes()
            lines.append(f"bias-file {bias_name}")
    return "\n".join(lines) + "\n", blobs


def save_model(model: Model, manifest_path: str | Path) -> None:
    """Write the manifest plus one blob file per layer next to it."""
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    text, blobs = _format_manifest(model)
    for name, payload in blobs.items():
        (manifest_path.parent / name).write_bytes(payload)
    manifest_path.write_text(text)


class _ManifestReader:
    def __init__(self, text: str):
        self.entries: list[tuple[int, str, str]] = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition(" ")
            self.entries.append((lineno, key, value.strip()))
        self.pos = 0

    def expect(self, key: str) -> tuple[int, str]:
        if self.pos >= len(self.entries):
            raise MalformedManifestError(f"manifest ends early, expected '{key}'")
        lineno, got, value = self.entries[self.pos]
        if got != key:
            raise MalformedManifestError(f"line {lineno}: expected '{key}', found '{got}'")
        self.pos += 1
        return lineno, value

    def peek_key(self) -> str | None:
        return self.entries[self.pos][1] if self.pos < len(self.entries) else None


def _parse_int(value: str, lineno: int, label: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise MalformedManifestError(f"line {lineno}: {label} must be an integer, got {value!r}")


def load_model(manifest_path: str | Path) -> Model:
    manifest_path = Path(manifest_path)
    try:
        text = manifest_path.read_text()
    except OSError as exc:
        raise MalformedManifestError(f"cannot read manifest: {exc}") from exc
    reader = _ManifestReader(text)

    lineno, version = reader.expect("shiftconv-model")
    if _parse_int(version, lineno, "format version") != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(f"model format version {version}")
    lineno, relu_value = reader.expect("relu")
    relu = bool(_parse_int(relu_value, lineno, "relu flag"))

    config = None
    if reader.peek_key() == "shifts":
        lineno, shifts = reader.expect("shifts")
        lineno2, bits = reader.expect("index-bits")
        config = CodebookConfig(_parse_int(shifts, lineno, "shifts"),
                                _parse_int(bits, lineno2, "index-bits"))
    lineno, count_value = reader.expect("layers")
    count = _parse_int(count_value, lineno, "layer count")

    layers = []
    for _ in range(count):
        lineno, name = reader.expect("layer")
        lineno, geometry = reader.expect("geometry")
        fields = geometry.split()
        if len(fields) != 8:
            raise MalformedManifestError(f"line {lineno}: geometry needs 8 integers")
        c, co, kh, kw, h, w, stride, pad = (_parse_int(v, lineno, "geometry") for v in fields)
        lineno, bias_value = reader.expect("bias")
        has_bias = bool(_parse_int(bias_value, lineno, "bias flag"))
        try:
            spec = LayerSpec(name, c, co, kh, kw, h, w, stride, pad, has_bias)
        except InvalidConfigError as exc:
            raise MalformedManifestError(f"line {lineno}: {exc.message}") from exc

        lineno, kind = reader.expect("kind")
        if kind == "quantized":
            if config is None:
                raise MalformedManifestError(f"line {lineno}: quantized layer without a model config")
            lineno, scale_text = reader.expect("scale")
            try:
                scale = float.fromhex(scale_text)
            except ValueError:
                raise MalformedManifestError(f"line {lineno}: bad hex float {scale_text!r}")
            _, blob_name = reader.expect("indices")
            raw = _read_blob(manifest_path.parent / blob_name)
            expected = int(np.prod(spec.weight_shape, dtype=np.int64)) * config.shifts
            if len(raw) != expected:
                raise BlobLengthMismatchError(
                    f"{blob_name}: expected {expected} bytes, got {len(raw)}"
                )
            indices = np.frombuffer(raw, dtype=np.int8).reshape(spec.weight_shape + (config.shifts,))
            if indices.size and int(np.max(np.abs(indices))) > config.max_index:
                raise IndexOutOfRangeError(
                    f"{blob_name}: index beyond max {config.max_index} for bits={config.bits}"
                )
            weights: np.ndarray | QuantizedWeightTensor = QuantizedWeightTensor(
                indices.copy(), scale, config
            )
        elif kind == "float":
            _, blob_name = reader.expect("weights")
            loaded = tensor_from_bytes(_read_blob(manifest_path.parent / blob_name))
            if isinstance(loaded, FixedPointTensor):
                raise MalformedManifestError(f"{blob_name}: float weights expected")
            weights = loaded
        else:
            raise MalformedManifestError(f"line {lineno}: unknown layer kind {kind!r}")

        bias = None
        if has_bias:
            _, bias_name = reader.expect("bias-file")
            raw = _read_blob(manifest_path.parent / bias_name)
            if len(raw) != 4 * spec.out_channels:
                raise BlobLengthMismatchError(
                    f"{bias_name}: expected {4 * spec.out_channels} bytes, got {len(raw)}"
                )
            bias = np.frombuffer(raw, dtype="<f4").copy()
        layers.append(ModelLayer(spec, weights, bias))

    model = Model(layers, config, relu)
    model.validate()
    return model


def _read_blob(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise MalformedManifestError(f"cannot read blob {path.name}: {exc}") from exc
