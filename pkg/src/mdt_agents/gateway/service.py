"""HTTP intake: accept a case, run it in the background, serve the persisted report."""

from __future__ import annotations

import json
import logging
import secrets
import traceback
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from functools import lru_cache
from importlib import resources
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse, Response
from jsonschema import Draft202012Validator

from ..case import case_from_dict
from ..errors import IngestionError, PipelineError
from ..orchestrator import PipelineConfig, execute
from ..rules import RuleTable
from .config import config_fingerprint
from .store import CONTEXT, ERROR, REPORT, RunStatus, RunStore

logger = logging.getLogger(__name__)


@lru_cache(maxsize=1)
def case_validator() -> Draft202012Validator:
    schema = json.loads(resources.files("mdt_agents.data").joinpath("case.schema.json").read_text("utf-8"))
    return Draft202012Validator(schema)


def validate_case_doc(doc: Any) -> list[dict[str, str]]:
    """Field-level schema errors, empty when the document is acceptable."""
    errors = sorted(case_validator().iter_errors(doc), key=lambda e: list(e.absolute_path))
    out = [{"field": "/" + "/".join(str(p) for p in e.absolute_path), "message": e.message} for e in errors]
    if not out:
        try:
            case_from_dict(doc)
        except IngestionError as exc:
            out.append({"field": "/", "message": str(exc)})
    return out


def _error(status: int, message: str, **extra: Any) -> JSONResponse:
    return JSONResponse({"error": message, **extra}, status_code=status)


def create_app(
    config: PipelineConfig,
    rules: RuleTable,
    store: RunStore,
    *,
    max_concurrent: int = 4,
    auth_token: str | None = None,
) -> FastAPI:
    """Build the service. Runs start in submission order on a bounded pool."""
    fingerprint = config_fingerprint(config, rules)
    pool = ThreadPoolExecutor(max_workers=max(1, max_concurrent), thread_name_prefix="mdt-run")

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        yield
        pool.shutdown(wait=True)

    app = FastAPI(title="mdt-agents", lifespan=lifespan)
    app.state.store = store
    app.state.pool = pool
    app.state.fingerprint = fingerprint

    @app.middleware("http")
    async def require_token(request: Request, call_next):
        if auth_token and request.url.path != "/health":
            header = request.headers.get("authorization", "")
            if not secrets.compare_digest(header, f"Bearer {auth_token}"):
                return _error(401, "missing or invalid bearer token")
        return await call_next(request)

    def work(run_id: str, doc: dict[str, Any]) -> None:
        store.mark_running(run_id)
        try:
            run = execute(case_from_dict(doc), config, rules)
            store.put_result(run_id, run.report.to_json(), run.context, run.stage_log)
        except PipelineError as exc:
            logger.warning("run %s failed: %s", run_id, exc)
            store.put_error(run_id, {"error": str(exc), "diagnostics": exc.diagnostics}, exc.context)
        except Exception as exc:  # keep the worker alive and the run observable
            logger.exception("run %s crashed", run_id)
            store.put_error(run_id, {"error": repr(exc), "diagnostics": traceback.format_exc()})

    @app.get("/health")
    def health() -> dict[str, str]:
        return {"status": "ok", "config_fingerprint": fingerprint}

    @app.post("/cases")
    async def submit(request: Request):
        try:
            doc = json.loads(await request.body())
        except ValueError as exc:
            return _error(400, "request body is not valid JSON", detail=str(exc))
        errors = validate_case_doc(doc)
        if errors:
            return _error(400, "invalid case", fields=errors)
        run_id = store.create(doc, fingerprint)
        pool.submit(work, run_id, doc)
        return JSONResponse({"run_id": run_id, "status": RunStatus.PENDING.value}, status_code=202)

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        try:
            status = store.status(run_id)
        except KeyError:
            return _error(404, f"unknown run {run_id}")
        meta = store.read_json(run_id, "meta.json") or {}
        body: dict[str, Any] = {
            "run_id": run_id,
            "status": status.value,
            "started": status is not RunStatus.PENDING or store.started(run_id),
            "case_id": meta.get("case_id"),
            "config_fingerprint": meta.get("config_fingerprint"),
        }
        if status is RunStatus.DONE:
            body["report"] = store.read_json(run_id, REPORT)
        elif status is RunStatus.FAILED:
            body["error"] = store.read_json(run_id, ERROR)
        return body

    @app.get("/runs/{run_id}/report")
    def get_report(run_id: str):
        try:
            status = store.status(run_id)
        except KeyError:
            return _error(404, f"unknown run {run_id}")
        if status is not RunStatus.DONE:
            return _error(409, f"run is {status.value}", run_status=status.value)
        return Response(store.read_bytes(run_id, REPORT), media_type="application/json")

    @app.get("/runs/{run_id}/context")
    def get_context(run_id: str):
        try:
            data = store.read_bytes(run_id, CONTEXT)
        except KeyError:
            return _error(404, f"unknown run {run_id}")
        if data is None:
            return _error(409, "context not available yet")
        return PlainTextResponse(data.decode("utf-8"))

    return app
