"""Pydantic request/response models for the HTTP service.

Models travel as a bundle: a mapping of file name to base64 content
(the manifest plus its blob files).  Single tensors are one base64
string in the ``SHCT`` tensor format.
"""

from __future__ import annotations

from pydantic import BaseModel, Field

MANIFEST_NAME = "model.txt"


class QuantizeRequest(BaseModel):
    bundle: dict[str, str]
    shifts: int = 2
    bits: int = 4
    manifest: str = MANIFEST_NAME


class LayerQuantReport(BaseModel):
    layer: str
    scale: float
    distortion: float


class QuantizeResponse(BaseModel):
    bundle: dict[str, str]
    manifest: str
    layers: list[LayerQuantReport]


class InferRequest(BaseModel):
    bundle: dict[str, str]
    input_tensor: str
    manifest: str = MANIFEST_NAME
    float_oracle: bool = False
    requantize: bool = True
    workers: int = Field(default=1, ge=1)


class InferResponse(BaseModel):
    output_tensor: str


class CompareRequest(BaseModel):
    bundle: dict[str, str]
    inputs: list[str]
    manifest: str = MANIFEST_NAME
    bins: int = Field(default=101, ge=2)
    workers: int = Field(default=1, ge=1)


class OpCountReport(BaseModel):
    shifts: int
    sign_flips: int
    selects: int
    adds: int
    multiplies: int
    buffer_builds: int


class HistogramReport(BaseModel):
    centers: list[float]
    counts: list[int]


class CompareResponse(BaseModel):
    max_abs_error: float
    exact: bool
    per_input_max_abs: list[float]
    op_counts: OpCountReport
    histogram: HistogramReport
    bias: float
    variance: float


class AnalyzeRequest(BaseModel):
    layers_text: str
    shifts: int = 2
    bits: int = 4
    source: str = "<request>"


class LayerCostReport(BaseModel):
    name: str
    mult_cycles: int
    shift_alu_cycles: int
    shift_product_ops: int
    speedup: float


class AnalyzeResponse(BaseModel):
    rows: list[LayerCostReport]
    total_mult_cycles: int
    total_shift_alu_cycles: int
    total_shift_product_ops: int
    speedup: float


class HistogramRequest(BaseModel):
    tensor: str | None = None
    bundle: dict[str, str] | None = None
    manifest: str = MANIFEST_NAME
    bins: int = Field(default=101, ge=2)


class HistogramResponse(BaseModel):
    histogram: HistogramReport
    total: int


class ErrorBody(BaseModel):
    error: str
    detail: str
