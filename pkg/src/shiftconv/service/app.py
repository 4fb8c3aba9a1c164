"""FastAPI application exposing the toolkit workflows.

Run with ``shiftconv serve`` or ``uvicorn shiftconv.service.app:app``.
Toolkit errors map to HTTP 400 with a stable ``error`` slug the thin
CLI client translates into exit codes.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..errors import ShiftConvError
from . import operations, schemas

app = FastAPI(
    title="shiftconv",
    description="Multiplierless convolution: power-of-two quantization, "
    "shift/add inference with a float oracle, and cycle-count analysis.",
    version="0.1.0",
)


@app.exception_handler(ShiftConvError)
async def toolkit_error_handler(request: Request, exc: ShiftConvError) -> JSONResponse:
    body = schemas.ErrorBody(error=exc.slug, detail=exc.message)
    return JSONResponse(status_code=400, content=body.model_dump())


@app.get("/v1/health")
def health() -> dict[str, str]:
    return {"status": "ok"}


@app.post("/v1/quantize", response_model=schemas.QuantizeResponse)
def quantize(request: schemas.QuantizeRequest) -> schemas.QuantizeResponse:
    return operations.quantize_op(request)


@app.post("/v1/infer", response_model=schemas.InferResponse)
def infer(request: schemas.InferRequest) -> schemas.InferResponse:
    return operations.infer_op(request)


@app.post("/v1/compare", response_model=schemas.CompareResponse)
def compare(request: schemas.CompareRequest) -> schemas.CompareResponse:
    return operations.compare_op(request)


@app.post("/v1/analyze", response_model=schemas.AnalyzeResponse)
def analyze(request: schemas.AnalyzeRequest) -> schemas.AnalyzeResponse:
    return operations.analyze_op(request)


@app.post("/v1/histogram", response_model=schemas.HistogramResponse)
def histogram(request: schemas.HistogramRequest) -> schemas.HistogramResponse:
    return operations.histogram_op(request)
