"""Command-line front end.

A thin client over the service workflows: by default requests are
served in-process by the same functions behind the HTTP endpoints;
``--server URL`` sends them to a running instance instead.  Exit codes:
0 success, 1 usage error, 2 I/O or format error, 3 numerical failure.
Reports on stdout are byte-deterministic; wall-clock timings go to
stderr.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ShiftConvError
from .service import operations, schemas

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FORMAT = 2
EXIT_NUMERIC = 3

_USAGE_SLUGS = {"invalid-config"}
_NUMERIC_SLUGS = {"domain-error", "input-width-exceeded", "accumulator-overflow"}


def exit_code_for(slug: str) -> int:
    if slug in _USAGE_SLUGS:
        return EXIT_USAGE
    if slug in _NUMERIC_SLUGS:
        return EXIT_NUMERIC
    return EXIT_FORMAT


class _CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(code: int, message: str) -> "_CliFailure":
    return _CliFailure(code, message)


# --------------------------------------------------------------------------
# local-file <-> wire helpers (the only format knowledge the client has is
# which manifest keys name blob files)

_BLOB_KEYS = ("indices", "weights", "bias-file")


def _read_file(path: str | Path, label: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise _fail(EXIT_FORMAT, f"cannot read {label} {path}: {exc}")


def _write_file(path: str | Path, payload: bytes, label: str) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise _fail(EXIT_FORMAT, f"cannot write {label} {path}: {exc}")


def _model_bundle(manifest_path: str) -> tuple[dict[str, str], str]:
    manifest = Path(manifest_path)
    raw = _read_file(manifest, "model manifest")
    bundle = {manifest.name: operations.encode_bytes(raw)}
    for line in raw.decode(errors="replace").splitlines():
        fields = line.strip().split()
        if len(fields) == 2 and fields[0] in _BLOB_KEYS:
            blob = manifest.parent / fields[1]
            bundle[fields[1]] = operations.encode_bytes(_read_file(blob, "model blob"))
    return bundle, manifest.name


def _write_bundle(bundle: dict[str, str], manifest_name: str, out_path: str) -> None:
    out = Path(out_path)
    for name, payload in bundle.items():
        target = out if name == manifest_name else out.parent / name
        _write_file(target, operations.decode_bytes(payload, name), "model file")


# --------------------------------------------------------------------------
# request dispatch (in-process by default, HTTP when --server is given)

_ENDPOINTS = {
    schemas.QuantizeRequest: ("/v1/quantize", operations.quantize_op, schemas.QuantizeResponse),
    schemas.InferRequest: ("/v1/infer", operations.infer_op, schemas.InferResponse),
    schemas.CompareRequest: ("/v1/compare", operations.compare_op, schemas.CompareResponse),
    schemas.AnalyzeRequest: ("/v1/analyze", operations.analyze_op, schemas.AnalyzeResponse),
    schemas.HistogramRequest: ("/v1/histogram", operations.histogram_op, schemas.HistogramResponse),
}


def _dispatch(request, server: str | None):
    for request_type, (path, local, response_type) in _ENDPOINTS.items():
        if isinstance(request, request_type):
            break
    else:  # pragma: no cover - all request types are registered
        raise _fail(EXIT_USAGE, f"no endpoint for {type(request).__name__}")
    if server is None:
        return local(request)
    import httpx

    try:
        reply = httpx.post(server.rstrip("/") + path, json=request.model_dump(), timeout=600.0)
    except httpx.HTTPError as exc:
        raise _fail(EXIT_FORMAT, f"server request failed: {exc}")
    if reply.status_code != 200:
        try:
            body = reply.json()
            slug, detail = body["error"], body["detail"]
        except Exception:
            raise _fail(EXIT_FORMAT, f"server returned status {reply.status_code}")
        raise _fail(exit_code_for(slug), f"{slug}: {detail}")
    return response_type.model_validate(reply.json())


# --------------------------------------------------------------------------
# subcommands


def _cmd_quantize(args) -> int:
    bundle, manifest_name = _model_bundle(args.model)
    request = schemas.QuantizeRequest(
        bundle=bundle, shifts=args.shifts, bits=args.bits, manifest=manifest_name
    )
    response = _dispatch(request, args.server)
    out_name = Path(args.output).name
    bundle_out = {out_name if k == manifest_name else k: v for k, v in response.bundle.items()}
    _write_bundle(bundle_out, out_name, args.output)
    for row in response.layers:
        print(f"layer {row.layer}: scale {row.scale!r} distortion {row.distortion!r}")
    return EXIT_OK


def _cmd_infer(args) -> int:
    bundle, manifest_name = _model_bundle(args.model)
    request = schemas.InferRequest(
        bundle=bundle,
        manifest=manifest_name,
        input_tensor=operations.encode_bytes(_read_file(args.input, "input tensor")),
        float_oracle=args.float_oracle,
        requantize=not args.no_requant,
        workers=args.workers,
    )
    started = time.perf_counter()
    response = _dispatch(request, args.server)
    print(f"timing: {time.perf_counter() - started:.3f}s", file=sys.stderr)
    _write_file(args.output, operations.decode_bytes(response.output_tensor, "output"), "output")
    return EXIT_OK


def _random_inputs(args) -> list[str]:
    if args.seed is None:
        raise _fail(EXIT_USAGE, "--random-inputs requires an explicit --seed")
    from .tensorio import load_model

    model = load_model(args.model)
    spec = model.layers[0].spec
    rng = np.random.default_rng(args.seed)
    payloads = []
    from .tensorio import tensor_to_bytes

    for _ in range(args.random_inputs):
        x = rng.uniform(-1.0, 1.0, size=(spec.in_channels, spec.height, spec.width))
        payloads.append(operations.encode_bytes(tensor_to_bytes(x.astype(np.float32))))
    return payloads


def _cmd_compare(args) -> int:
    bundle, manifest_name = _model_bundle(args.model)
    inputs = [operations.encode_bytes(_read_file(p, "input tensor")) for p in args.inputs]
    if args.random_inputs:
        inputs += _random_inputs(args)
    if not inputs:
        raise _fail(EXIT_USAGE, "no inputs")
    request = schemas.CompareRequest(
        bundle=bundle, manifest=manifest_name, inputs=inputs,
        bins=args.bins, workers=args.workers,
    )
    started = time.perf_counter()
    response = _dispatch(request, args.server)
    print(f"timing: {time.perf_counter() - started:.3f}s", file=sys.stderr)
    for i, value in enumerate(response.per_input_max_abs):
        print(f"input {i}: max-abs-error {value!r}")
    ops = response.op_counts
    print(
        f"ops: shifts={ops.shifts} sign-flips={ops.sign_flips} selects={ops.selects} "
        f"adds={ops.adds} multiplies={ops.multiplies} buffer-builds={ops.buffer_builds}"
    )
    print(f"max-abs-error {response.max_abs_error!r}")
    print(f"bias {response.bias!r} variance {response.variance!r}")
    if args.histogram:
        for center, count in zip(response.histogram.centers, response.histogram.counts):
            print(f"{center!r} {count}")
    print(f"exact: {'yes' if response.exact else 'no'}")
    return EXIT_OK if response.exact else EXIT_NUMERIC


def _cmd_analyze(args) -> int:
    text = _read_file(args.layers, "layer file").decode(errors="replace")
    request = schemas.AnalyzeRequest(
        layers_text=text, shifts=args.shifts, bits=args.bits, source=Path(args.layers).name
    )
    response = _dispatch(request, args.server)
    header = f"{'layer':<24} {'mult-cycles':>16} {'shiftalu-cycles':>16} {'product-ops':>16} {'speedup':>10}"
    print(header)
    for row in response.rows:
        print(
            f"{row.name:<24} {row.mult_cycles:>16} {row.shift_alu_cycles:>16} "
            f"{row.shift_product_ops:>16} {row.speedup:>10g}"
        )
    print(
        f"{'total':<24} {response.total_mult_cycles:>16} {response.total_shift_alu_cycles:>16} "
        f"{response.total_shift_product_ops:>16} {response.speedup:>10g}"
    )
    return EXIT_OK


def _cmd_hist(args) -> int:
    payload = _read_file(args.target, "histogram target")
    if payload[:4] == b"SHCT":
        request = schemas.HistogramRequest(
            tensor=operations.encode_bytes(payload), bins=args.bins
        )
    else:
        bundle, manifest_name = _model_bundle(args.target)
        request = schemas.HistogramRequest(bundle=bundle, manifest=manifest_name, bins=args.bins)
    response = _dispatch(request, args.server)
    lines = [
        f"{center!r} {count}"
        for center, count in zip(response.histogram.centers, response.histogram.counts)
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_file(args.out, text.encode(), "histogram")
    else:
        print(text, end="")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftconv",
        description="Quantize, run, verify and analyze multiplierless convolution models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_server(p):
        p.add_argument("--server", default=None, help="URL of a running shiftconv service")

    p = sub.add_parser("quantize", help="quantize a float model to codeword indices")
    p.add_argument("model")
    p.add_argument("output")
    p.add_argument("--shifts", type=int, default=2)
    p.add_argument("--bits", type=int, default=4)
    add_server(p)
    p.set_defaults(func=_cmd_quantize)

    p = sub.add_parser("infer", help="run a model on an input tensor")
    p.add_argument("model")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--float-oracle", action="store_true", help="use the float reference path")
    p.add_argument("--no-requant", action="store_true",
                   help="keep activations in float64 (implies the reference path)")
    p.add_argument("--workers", type=int, default=1)
    add_server(p)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("compare", help="verify the shift datapath against the float oracle")
    p.add_argument("model")
    p.add_argument("inputs", nargs="*")
    p.add_argument("--random-inputs", type=int, default=0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--bins", type=int, default=101)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--histogram", action="store_true", help="print the divergence histogram")
    add_server(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("analyze", help="cycle counts and speedup for a layer inventory")
    p.add_argument("layers")
    p.add_argument("--shifts", type=int, default=2)
    p.add_argument("--bits", type=int, default=4)
    add_server(p)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("hist", help="weight histogram of a model or tensor file")
    p.add_argument("target")
    p.add_argument("--bins", type=int, default=101)
    p.add_argument("--out", default=None)
    add_server(p)
    p.set_defaults(func=_cmd_hist)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=_cmd_serve, server=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except _CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ShiftConvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc.slug)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
