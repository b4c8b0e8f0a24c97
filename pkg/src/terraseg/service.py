"""HTTP service exposing the toolkit over multipart/JSON.

Every endpoint shares its implementation with the CLI (see ``ops``), so
responses are byte-identical to CLI output for identical inputs. Requests are
independent; the only shared state is the immutable schema and limits.
"""

from __future__ import annotations

import json
import os

from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import Response

from . import ops
from .errors import TerrasegError, ValidationFailure
from .jsonio import canonical_json_bytes
from .postprocess import CrfParams, EXACT_PIXEL_LIMIT
from .schema import ClassSchema, default_schema

DEFAULT_MAX_BODY_BYTES = 64 * 1024 * 1024
MAX_BODY_ENV = "TERRASEG_MAX_BODY_BYTES"

_MULTIPART_BOUNDARY = "terraseg-part"


def _json_response(body: bytes, status: int = 200) -> Response:
    return Response(content=body, status_code=status, media_type="application/json")


def _error_response(code: str, message: str, status: int) -> Response:
    body = canonical_json_bytes({"error": {"type": code, "message": message}})
    return _json_response(body, status)


def multipart_mixed(parts: list[tuple[str, str, bytes]]) -> Response:
    """Deterministic multipart/mixed response: (name, content-type, payload) parts."""
    chunks = []
    for name, ctype, payload in parts:
        chunks.append(
            f"--{_MULTIPART_BOUNDARY}\r\nContent-Type: {ctype}\r\n"
            f"Content-Disposition: inline; name=\"{name}\"\r\n\r\n".encode())
        chunks.append(payload)
        chunks.append(b"\r\n")
    chunks.append(f"--{_MULTIPART_BOUNDARY}--\r\n".encode())
    return Response(
        content=b"".join(chunks),
        media_type=f"multipart/mixed; boundary={_MULTIPART_BOUNDARY}")


def split_multipart_mixed(body: bytes) -> dict[str, bytes]:
    """Inverse of ``multipart_mixed`` for clients and tests."""
    delim = f"--{_MULTIPART_BOUNDARY}".encode()
    parts: dict[str, bytes] = {}
    for chunk in body.split(delim):
        chunk = chunk.strip(b"\r\n")
        if not chunk or chunk == b"--":
            continue
        header, _, payload = chunk.partition(b"\r\n\r\n")
        name = None
        for line in header.split(b"\r\n"):
            if line.lower().startswith(b"content-disposition"):
                for piece in line.split(b";"):
                    piece = piece.strip()
                    if piece.startswith(b'name="'):
                        name = piece[6:-1].decode()
        if name is not None:
            parts[name] = payload
    return parts


async def _read_upload(upload: UploadFile) -> bytes:
    data = await upload.read()
    await upload.close()
    return data


def create_app(schema: ClassSchema | None = None,
               max_body_bytes: int | None = None) -> FastAPI:
    schema = schema or default_schema()
    if max_body_bytes is None:
        max_body_bytes = int(os.environ.get(MAX_BODY_ENV, DEFAULT_MAX_BODY_BYTES))
    app = FastAPI(title="terraseg", version="1")

    @app.middleware("http")
    async def _limit_body(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and length.isdigit() and int(length) > max_body_bytes:
            return _error_response(
                "PayloadTooLarge",
                f"request body {length} bytes exceeds limit {max_body_bytes}", 413)
        return await call_next(request)

    @app.exception_handler(TerrasegError)
    async def _toolkit_error(_request: Request, exc: TerrasegError):
        return _error_response(exc.code, str(exc), 400)

    @app.exception_handler(RequestValidationError)
    async def _request_error(_request: Request, exc: RequestValidationError):
        return _error_response("BadRequest", str(exc.errors()), 400)

    @app.get("/v1/healthz")
    async def healthz():
        return _json_response(canonical_json_bytes({"status": "ok"}))

    @app.post("/v1/metrics")
    async def metrics_endpoint(gt: UploadFile = File(...), pred: UploadFile = File(...),
                               top_k: int = Form(5)):
        pair = (await _read_upload(gt), await _read_upload(pred))
        return _json_response(ops.metrics_report_bytes(schema, [pair], top_k=top_k))

    @app.post("/v1/loss")
    async def loss_endpoint(logits: UploadFile = File(...), mask: UploadFile = File(...),
                            lambda_ce: float = Form(0.7), lambda_dice: float = Form(0.3),
                            epsilon: float = Form(1e-6)):
        body = ops.loss_report_bytes(
            schema, await _read_upload(logits), await _read_upload(mask),
            lambda_ce, lambda_dice, epsilon)
        return _json_response(body)

    @app.post("/v1/crf")
    async def crf_endpoint(probs: UploadFile = File(...), image: UploadFile = File(...),
                           params: str = Form("{}")):
        try:
            raw = json.loads(params)
        except json.JSONDecodeError as exc:
            raise ValidationFailure(f"params is not valid JSON: {exc}") from exc
        exact_limit = int(raw.pop("exact_pixel_limit", EXACT_PIXEL_LIMIT))
        allowed = {"iterations", "w_smooth", "theta_gamma", "w_bilateral",
                   "theta_alpha", "theta_beta"}
        unknown = set(raw) - allowed
        if unknown:
            raise ValidationFailure(f"unknown CRF params: {sorted(unknown)}")
        crf_params = CrfParams(**raw)
        refined = ops.crf_tst1(await _read_upload(probs), await _read_upload(image),
                               crf_params, exact_limit)
        return Response(content=refined, media_type="application/octet-stream")

    @app.post("/v1/uncertainty")
    async def uncertainty_endpoint(probs: UploadFile = File(...),
                                   threshold: float = Form(0.5)):
        report, heatmap = ops.uncertainty_outputs(await _read_upload(probs), threshold)
        return multipart_mixed([
            ("report", "application/json", report),
            ("entropy", "image/png", heatmap),
        ])

    @app.post("/v1/costmap")
    async def costmap_endpoint(mask: UploadFile = File(...),
                               safe_cost: float = Form(1.0),
                               caution_cost: float = Form(10.0)):
        sidecar, png = ops.costmap_outputs(schema, await _read_upload(mask),
                                           safe_cost, caution_cost)
        return multipart_mixed([
            ("sidecar", "application/json", sidecar),
            ("costmap", "image/png", png),
        ])

    @app.post("/v1/plan")
    async def plan_endpoint(costmap: UploadFile = File(...),
                            sidecar: UploadFile = File(...),
                            request: str = Form(...)):
        try:
            req = json.loads(request)
            start = tuple(int(v) for v in req["start"])
            goal = tuple(int(v) for v in req["goal"])
            clearance = int(req.get("clearance", 0))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValidationFailure(f"bad plan request: {exc}") from exc
        body = ops.plan_bytes(await _read_upload(costmap), await _read_upload(sidecar),
                              start, goal, clearance)
        return _json_response(body)

    return app
