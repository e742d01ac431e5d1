"""HTTP service exposing the query, ingest, registry and eval endpoints.

Queries return HTTP 200 whether or not the guardrails blocked them: a block
is a policy outcome carried in the body (``blocked: true``), not a transport
failure. Streaming responses are server-sent events — one ``token`` event
per delivered fragment, then a terminal ``outcome`` event carrying the full
query outcome (trace, retrieval artifacts, timings).

Ingest swaps in a freshly built pipeline atomically; queries already in
flight finish on the snapshot they started with.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import replace

from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from .config import PipelineConfig, ServiceConfig
from .errors import BackendError, JudgeError, ParseError, ValidationError
from .evalkit.generate import load_records
from .evalkit.runner import JudgeSuite, run_eval
from .pipeline import Pipeline, build_pipeline

logger = logging.getLogger(__name__)


class QueryRequest(BaseModel):
    query: str
    mode: str | None = None
    stream: bool = False


class IngestRequest(BaseModel):
    manifest_path: str


class EvalRequest(BaseModel):
    dataset_path: str
    mode: str = "dcd"


def _registry_summary(pipeline: Pipeline) -> dict:
    reg = pipeline.registry
    return {
        "domains": [
            {
                "id": d.id,
                "name": d.name,
                "is_fallback": d.is_fallback,
                "collections": [
                    {
                        "id": c.id,
                        "name": c.name,
                        "is_fallback": c.is_fallback,
                        "documents": [
                            {"id": doc.id, "title": doc.title,
                             "is_fallback": doc.is_fallback}
                            for doc in reg.documents
                            if doc.collection_id == c.id
                        ],
                    }
                    for c in reg.collections
                    if c.domain_id == d.id
                ],
            }
            for d in reg.domains
        ],
        "counts": {
            "domains": len(reg.domains),
            "collections": len(reg.collections),
            "documents": len(reg.documents),
            "chunks": len(pipeline.index),
        },
    }


def create_app(
    pipeline: Pipeline,
    *,
    judges: JudgeSuite | None = None,
    max_query_chars: int = 4000,
    max_concurrent: int = 8,
) -> FastAPI:
    app = FastAPI(title="dcdrag", version="0.1.0")
    state = {"pipeline": pipeline}
    swap_lock = threading.Lock()
    slots = threading.BoundedSemaphore(max_concurrent)
    suite = judges or JudgeSuite.offline()

    def current() -> Pipeline:
        return state["pipeline"]

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/v1/registry")
    def registry():
        return _registry_summary(current())

    @app.post("/v1/query")
    def query(req: QueryRequest):
        if not req.query.strip():
            raise HTTPException(status_code=400, detail="query must be non-empty")
        if len(req.query) > max_query_chars:
            raise HTTPException(
                status_code=400,
                detail=f"query exceeds {max_query_chars} characters",
            )
        if req.mode is not None and req.mode not in ("dcd", "naive"):
            raise HTTPException(status_code=400, detail="mode must be dcd or naive")
        if not slots.acquire(blocking=False):
            raise HTTPException(status_code=503, detail="too many concurrent queries")
        pipe = current()  # pin the snapshot for this request
        if not req.stream:
            try:
                outcome = pipe.answer_query(req.query, req.mode)
                return outcome.to_dict()
            except BackendError as exc:
                raise HTTPException(status_code=502, detail=str(exc)) from exc
            finally:
                slots.release()

        def events():
            try:
                for kind, payload in pipe.stream_query(req.query, req.mode):
                    if kind == "token":
                        data = json.dumps({"token": payload}, ensure_ascii=False)
                        yield f"event: token\ndata: {data}\n\n"
                    else:
                        data = json.dumps(payload.to_dict(), ensure_ascii=False)
                        yield f"event: outcome\ndata: {data}\n\n"
                yield "data: [DONE]\n\n"
            except BackendError as exc:
                data = json.dumps({"error": str(exc)})
                yield f"event: error\ndata: {data}\n\n"
            finally:
                slots.release()

        return StreamingResponse(events(), media_type="text/event-stream")

    @app.post("/v1/ingest")
    def ingest(req: IngestRequest):
        try:
            config = replace(current().config, manifest_path=req.manifest_path)
            rebuilt = build_pipeline(config)
        except (ParseError, ValidationError, OSError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        with swap_lock:
            state["pipeline"] = rebuilt
        return _registry_summary(rebuilt)["counts"]

    @app.post("/v1/eval")
    def eval_endpoint(req: EvalRequest):
        if req.mode not in ("dcd", "naive"):
            raise HTTPException(status_code=400, detail="mode must be dcd or naive")
        try:
            records = load_records(req.dataset_path)
        except (OSError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        try:
            report = run_eval(records, current(), suite, req.mode)
        except (BackendError, JudgeError) as exc:
            raise HTTPException(status_code=502, detail=str(exc)) from exc
        return report.to_dict()

    return app


def serve(config: ServiceConfig) -> None:
    """Build the pipeline from config and run the service (blocking)."""
    import uvicorn

    if not config.pipeline_config:
        raise ValueError("service config must name a pipeline_config file")
    pipeline = build_pipeline(PipelineConfig.from_file(config.pipeline_config))
    app = create_app(
        pipeline,
        max_query_chars=config.max_query_chars,
        max_concurrent=config.max_concurrent,
    )
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
