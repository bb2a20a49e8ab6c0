"""HTTP reward-scoring service.

Endpoints:
    POST /v1/score        rollout texts (+ optional probability streams) -> rewards and advantages
    POST /v1/advantages   precomputed rewards -> advantages
    GET  /healthz         liveness, body "ok"
"""
from __future__ import annotations

import logging
from typing import Callable

from fastapi import FastAPI, Request
from fastapi.responses import PlainTextResponse, Response
from starlette.concurrency import run_in_threadpool

from .. import __version__
from .wire import RequestError, advantages_request, canonical_bytes, score_request

logger = logging.getLogger(__name__)

DEFAULT_MAX_BODY_BYTES = 8 * 1024 * 1024


def _json(obj: dict, status: int = 200) -> Response:
    return Response(content=canonical_bytes(obj), status_code=status, media_type="application/json")


async def _read_body(request: Request, limit: int) -> bytes:
    declared = request.headers.get("content-length")
    if declared is not None and declared.isdigit() and int(declared) > limit:
        raise _TooLarge(int(declared))
    body = b""
    async for chunk in request.stream():
        body += chunk
        if len(body) > limit:
            raise _TooLarge(len(body))
    return body


class _TooLarge(Exception):
    def __init__(self, size: int):
        self.size = size


def create_app(max_body_bytes: int = DEFAULT_MAX_BODY_BYTES) -> FastAPI:
    app = FastAPI(title="blueprint-rl reward service", version=__version__)

    async def handle(request: Request, fn: Callable[[bytes], dict]) -> Response:
        try:
            body = await _read_body(request, max_body_bytes)
        except _TooLarge as exc:
            return _json({"error": "payload too large", "limit": max_body_bytes, "size": exc.size}, 413)
        try:
            result = await run_in_threadpool(fn, body)
        except RequestError as exc:
            return _json({"error": "malformed request", "details": exc.errors}, 400)
        return _json(result)

    @app.post("/v1/score")
    async def score(request: Request) -> Response:
        return await handle(request, score_request)

    @app.post("/v1/advantages")
    async def advantages(request: Request) -> Response:
        return await handle(request, advantages_request)

    @app.get("/healthz")
    async def healthz() -> PlainTextResponse:
        return PlainTextResponse("ok")

    return app


app = create_app()


def serve(bind: str = "127.0.0.1:8000", max_body_bytes: int = DEFAULT_MAX_BODY_BYTES) -> None:
    import uvicorn

    host, _, port = bind.rpartition(":")
    uvicorn.run(create_app(max_body_bytes), host=host or "127.0.0.1", port=int(port))
