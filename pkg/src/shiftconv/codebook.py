"""Power-of-two codebooks and the greedy multi-stage weight quantizer.

A weight is represented as a sum of ``shifts`` signed power-of-two
codewords, one per stage.  Stage ``n`` (1-based) can represent zero or
``sign * 2**(2 - n - k)`` for ``k`` in ``1..max_index``; the codeword is
stored as the signed index ``sign * k``.  The union of all stage
codebooks has exactly ``precompute_count`` distinct values, which is
what the shift engine precomputes per input element.

All quantizer arithmetic is done in double precision, but every step is
exact: floor-log2 comes from ``frexp`` and the round-up test compares
against ``1.5 * 2**level`` directly (both exactly representable), so the
emitted indices are platform independent, including at exact-tie inputs
such as 0.75 where the strict ``>`` keeps the lower exponent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidConfigError, ShapeMismatchError


@dataclass(frozen=True)
class CodebookConfig:
    """Quantizer geometry: ``shifts`` stages of ``bits``-bit codeword indices."""

    shifts: int
    bits: int

    def __post_init__(self):
        if not isinstance(self.shifts, int) or self.shifts < 1:
            raise InvalidConfigError(f"unsupported shift count {self.shifts!r}, need an integer >= 1")
        if not isinstance(self.bits, int) or self.bits < 2:
            raise InvalidConfigError(f"unsupported bit-width {self.bits!r}, need an integer >= 2")

    @property
    def codebook_size(self) -> int:
        """Codewords per stage (odd: zero plus sign-paired powers of two)."""
        return (1 << self.bits) - 1

    @property
    def max_index(self) -> int:
        return self.codebook_size // 2

    @property
    def precompute_count(self) -> int:
        """Distinct values in the union of all stage codebooks."""
        return self.codebook_size + 2 * (self.shifts - 1)

    @property
    def max_shift(self) -> int:
        """Largest shift-by-one count the engine applies per input element."""
        return self.precompute_count // 2 - 1


def codeword_value(stage: int, index: int, config: CodebookConfig) -> float:
    """Decode a signed stage index into its codeword value (0 for index 0)."""
    if abs(index) > config.max_index:
        raise DomainError(f"index {index} outside [-{config.max_index}, {config.max_index}]")
    if index == 0:
        return 0.0
    return math.copysign(math.ldexp(1.0, 2 - stage - abs(index)), index)


def build_codebook(config: CodebookConfig) -> tuple[list[list[float]], list[float]]:
    """Return the per-stage codeword lists and the sorted union of all stages."""
    stage_sets = []
    union: set[float] = {0.0}
    for stage in range(1, config.shifts + 1):
        values = [0.0]
        for k in range(1, config.max_index + 1):
            mag = math.ldexp(1.0, 2 - stage - k)
            values += [mag, -mag]
        stage_sets.append(sorted(values))
        union.update(values)
    return stage_sets, sorted(union)


def quantize_stage(value: float, stage: int, config: CodebookConfig) -> tuple[int, float]:
    """One greedy stage: nearest stage-``stage`` codeword to ``value``.

    Returns ``(signed_index, codeword)``; a residual too small for the
    stage's codebook clips to ``(0, 0.0)``.
    """
    if value == 0.0:
        return 0, 0.0
    mant, exp = math.frexp(abs(value))
    level = exp - 1
    if abs(value) > math.ldexp(1.5, level):
        level += 1
    magnitude = 2 - stage - level
    if magnitude > config.max_index:
        return 0, 0.0
    sign = 1 if value > 0.0 else -1
    return sign * magnitude, math.ldexp(float(sign), level)


def quantize_array(values: np.ndarray, config: CodebookConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized greedy quantizer over normalized values in [-1, 1].

    Returns ``(indices, approx)`` where ``indices`` has one extra trailing
    axis of length ``config.shifts`` (int8) and ``approx`` is the decoded
    reconstruction.  A zero residual forces all remaining stage indices
    to zero.
    """
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.size:
        if not np.all(np.isfinite(arr)):
            raise DomainError("quantizer input contains a non-finite value")
        if float(np.max(np.abs(arr))) > 1.0:
            raise DomainError("quantizer input outside [-1, 1]; normalize first")

    max_index = config.max_index
    residual = arr.copy()
    indices = np.zeros(arr.shape + (config.shifts,), dtype=np.int8)
    approx = np.zeros_like(residual)

    for stage in range(1, config.shifts + 1):
        live = residual != 0.0
        if not live.any():
            break
        sign = np.where(residual > 0.0, 1, -1)
        mag = np.abs(residual)
        _, exp = np.frexp(mag)
        level = exp.astype(np.int64) - 1
        # strict > keeps the lower exponent at the exact 1.5 * 2**level midpoint
        level = level + (mag > np.ldexp(1.5, level))
        magnitude = 2 - stage - level
        keep = live & (magnitude <= max_index)
        code = np.where(keep, np.ldexp(sign.astype(np.float64), level), 0.0)
        indices[..., stage - 1] = np.where(keep, sign * magnitude, 0).astype(np.int8)
        residual = residual - code  # exact: |residual| in (0.75, 1.5] * |code|
        approx = approx + code
    return indices, approx


def quantize_scalar(value: float, config: CodebookConfig) -> tuple[tuple[int, ...], float]:
    """Quantize one normalized value; returns the stage indices and reconstruction."""
    idx, approx = quantize_array(np.asarray([value], dtype=np.float64), config)
    return tuple(int(i) for i in idx[0]), float(approx[0])


@dataclass
class QuantizedWeightTensor:
    """Weights as per-stage codeword indices plus the normalization scale.

    ``indices`` has shape ``tensor_shape + (config.shifts,)``; ``scale`` is
    ``max(abs(original))`` (0.0 for an all-zero tensor, in which case every
    index is zero).
    """

    indices: np.ndarray
    scale: float
    config: CodebookConfig

    @property
    def shape(self) -> tuple[int, ...]:
        return self.indices.shape[:-1]

    def validate(self) -> None:
        if self.indices.ndim < 1 or self.indices.shape[-1] != self.config.shifts:
            raise ShapeMismatchError(
                f"index tensor shape {self.indices.shape} does not end in shifts={self.config.shifts}"
            )
        if self.indices.size and int(np.max(np.abs(self.indices))) > self.config.max_index:
            raise DomainError("stored index outside the configured codebook")


def quantize_tensor(weights: np.ndarray, config: CodebookConfig) -> QuantizedWeightTensor:
    """Normalize by max(abs(W)) and quantize every entry."""
    arr = np.ascontiguousarray(weights, dtype=np.float64)
    if arr.size == 0:
        raise DomainError("cannot quantize an empty tensor")
    if not np.all(np.isfinite(arr)):
        raise DomainError("weight tensor contains a non-finite value")
    scale = float(np.max(np.abs(arr)))
    if scale == 0.0:
        indices = np.zeros(arr.shape + (config.shifts,), dtype=np.int8)
        return QuantizedWeightTensor(indices, 0.0, config)
    indices, _ = quantize_array(arr / scale, config)
    return QuantizedWeightTensor(indices, scale, config)


def dequantize_tensor(quantized: QuantizedWeightTensor) -> np.ndarray:
    """Reconstruct ``scale * sum_n codeword(n, idx_n)`` for every entry."""
    idx = quantized.indices.astype(np.int64)
    config = quantized.config
    if idx.size and int(np.max(np.abs(idx))) > config.max_index:
        raise DomainError("stored index outside the configured codebook")
    stages = np.arange(1, config.shifts + 1, dtype=np.int64)
    exponents = 2 - stages - np.abs(idx)
    signs = np.sign(idx).astype(np.float64)
    normalized = np.ldexp(signs, exponents).sum(axis=-1)
    return normalized * quantized.scale


def empirical_distortion(weights: np.ndarray, config: CodebookConfig) -> float:
    """Mean squared error between normalized weights and their reconstruction."""
    arr = np.ascontiguousarray(weights, dtype=np.float64)
    if arr.size == 0:
        raise DomainError("cannot measure distortion of an empty tensor")
    scale = float(np.max(np.abs(arr)))
    if scale == 0.0:
        return 0.0
    normalized = arr / scale
    _, approx = quantize_array(normalized, config)
    err = normalized - approx
    return float(np.mean(err * err))
