"""HTTP facade over the execution core.

Routes speak plain JSON dicts, not generated models, because the error
contract is a closed code table: every failure maps to one of the codes in
ERROR_STATUS and arrives as {"error": {"code", "message", ...}}. Framework
default error shapes would leak through a model-validation layer.

State that must survive a restart lives under the data directory: graph
documents (graphs/<name>.json), the agent index (agents.json) and per-run
event logs (runs/<id>.events.jsonl). Run objects themselves are in-memory;
after a restart a parked run's log is still readable but the run is no
longer resumable, and the approval route says so instead of pretending.
"""

from __future__ import annotations

import json
import re
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool
from starlette.staticfiles import StaticFiles

from . import prebuilt as prebuilt_catalog
from .agents import (
    AgentError,
    AgentSpec,
    ChatMessage,
    EndpointConfig,
    invoke_agent,
)
from .context import REGISTRY_ID, registry_document
from .engine import (
    ArtifactMissing,
    Binding,
    Engine,
    InvalidGraph,
    Run,
    RunNotTerminal,
    RunStatus,
    UnboundInput,
    WrongState,
    export_report,
    run_exit_code,
)
from .graph import (
    AgentNodeConfig,
    GraphDocumentError,
    LogicConfig,
    WorkflowGraph,
    graph_to_document,
    parse_graph_document,
    validate_graph,
)

GRAPH_NAME_RE = re.compile(r"^[a-zA-Z0-9][a-zA-Z0-9._-]*$")

EVENT_PAGE_SIZE = 500

# Closed error vocabulary; every error response uses exactly one of these.
ERROR_STATUS = {
    "invalid_graph": 400,
    "duplicate_name": 409,
    "unknown_graph": 404,
    "unknown_run": 404,
    "unknown_agent": 404,
    "unknown_prebuilt": 404,
    "unbound_input": 400,
    "wrong_state": 409,
    "invalid_flag": 400,
    "endpoint_error": 502,
    "invalid_request": 400,
    "unauthorized": 401,
    "unsupported_media_type": 415,
}


class ApiError(Exception):
    def __init__(self, code: str, message: str, **extra):
        assert code in ERROR_STATUS
        super().__init__(message)
        self.code = code
        self.message = message
        self.extra = extra

    def response(self) -> JSONResponse:
        body = {"error": {"code": self.code, "message": self.message, **self.extra}}
        return JSONResponse(body, status_code=ERROR_STATUS[self.code])


@dataclass
class ServiceConfig:
    data_dir: str | Path
    auth_token: str | None = None
    agent_mode: str = "mock"
    endpoints: dict[str, EndpointConfig] = field(default_factory=dict)
    approval_deadline_s: float | None = None
    ui_dir: str | Path | None = None


class RunRegistry:
    """In-memory run table; the event log on disk is the durable record."""

    def __init__(self):
        self._runs: dict[str, Run] = {}
        self._meta: dict[str, dict] = {}
        self._lock = threading.Lock()

    def reserve(self, run_id: str, graph_name: str) -> None:
        with self._lock:
            self._meta[run_id] = {"graph": graph_name}

    def attach(self, run: Run) -> None:
        with self._lock:
            self._runs[run.run_id] = run

    def fail_placeholder(self, run_id: str, message: str) -> None:
        with self._lock:
            self._meta[run_id]["startup_error"] = message

    def get(self, run_id: str) -> Run | None:
        with self._lock:
            return self._runs.get(run_id)

    def meta(self, run_id: str) -> dict | None:
        with self._lock:
            meta = self._meta.get(run_id)
            return dict(meta) if meta else None

    def ids(self) -> list[str]:
        with self._lock:
            return list(self._meta)


class Service:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.data_dir = Path(config.data_dir)
        self.graphs_dir = self.data_dir / "graphs"
        self.runs_dir = self.data_dir / "runs"
        self.graphs_dir.mkdir(parents=True, exist_ok=True)
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self.agents_path = self.data_dir / "agents.json"
        self.registry = RunRegistry()
        self.engine = Engine(
            agent_mode=config.agent_mode,
            endpoints=config.endpoints,
            runs_dir=self.runs_dir,
            approval_deadline_s=config.approval_deadline_s,
        )

    # -- graph store ---------------------------------------------------

    def graph_path(self, name: str) -> Path:
        return self.graphs_dir / f"{name}.json"

    def list_graph_names(self) -> list[str]:
        return sorted(p.stem for p in self.graphs_dir.glob("*.json"))

    def load_graph_document(self, name: str) -> dict:
        path = self.graph_path(name)
        if not path.is_file():
            raise ApiError("unknown_graph", f"no graph named {name!r}")
        return json.loads(path.read_text(encoding="utf-8"))

    def load_graph(self, name: str) -> WorkflowGraph:
        return parse_graph_document(self.load_graph_document(name))

    def store_graph(self, doc: dict, *, replace_ok: bool = False) -> WorkflowGraph:
        try:
            graph = parse_graph_document(doc)
        except GraphDocumentError as exc:
            raise ApiError(
                "invalid_graph",
                "graph document failed to parse",
                diagnostics=[
                    {"code": d.code, "message": d.message, "where": d.where} for d in exc.errors
                ],
            ) from exc
        diags = validate_graph(graph)
        if diags:
            raise ApiError(
                "invalid_graph",
                "graph failed validation",
                diagnostics=[
                    {"code": d.code, "message": d.message, "where": d.where} for d in diags
                ],
            )
        if not GRAPH_NAME_RE.match(graph.name):
            raise ApiError(
                "invalid_request",
                f"graph name {graph.name!r} must match {GRAPH_NAME_RE.pattern}",
            )
        path = self.graph_path(graph.name)
        if path.exists() and not replace_ok:
            raise ApiError("duplicate_name", f"graph {graph.name!r} already exists")
        path.write_text(
            json.dumps(graph_to_document(graph), indent=2, sort_keys=True), encoding="utf-8"
        )
        self.index_agents(graph)
        return graph

    # -- agent index -----------------------------------------------------

    def load_agent_index(self) -> dict:
        if self.agents_path.is_file():
            return json.loads(self.agents_path.read_text(encoding="utf-8"))
        return {}

    def index_agents(self, graph: WorkflowGraph) -> None:
        index = self.load_agent_index()
        for node in graph.nodes:
            config = node.config
            spec = None
            if isinstance(config, AgentNodeConfig):
                spec = config.agent
            elif isinstance(config, LogicConfig) and config.agent is not None:
                spec = config.agent
            if spec is not None:
                index[spec.id] = spec.to_doc()
        self.agents_path.write_text(json.dumps(index, indent=2, sort_keys=True), encoding="utf-8")

    def get_agent(self, agent_id: str) -> AgentSpec:
        index = self.load_agent_index()
        if agent_id not in index:
            raise ApiError("unknown_agent", f"no registered agent {agent_id!r}")
        return AgentSpec.from_doc(index[agent_id])

    # -- runs ------------------------------------------------------------

    def start_run_async(self, graph: WorkflowGraph, bindings: dict[str, Binding]) -> str:
        # Preflight synchronously so bad requests fail with a 4xx instead of
        # a run that dies in the background.
        diags = validate_graph(graph)
        if diags:
            raise ApiError("invalid_graph", "; ".join(str(d) for d in diags))
        run_id = f"run-{uuid.uuid4().hex[:12]}"
        self.registry.reserve(run_id, graph.name)

        def work() -> None:
            try:
                run = self.engine.start_run(graph, bindings, run_id=run_id)
                self.registry.attach(run)
            except Exception as exc:  # startup failures recorded, not lost
                self.registry.fail_placeholder(run_id, f"{type(exc).__name__}: {exc}")

        thread = threading.Thread(target=work, name=f"run-{run_id}", daemon=True)
        thread.start()
        return run_id

    def events_from_disk(self, run_id: str) -> list[dict]:
        path = self.runs_dir / f"{run_id}.events.jsonl"
        if not path.is_file():
            raise ApiError("unknown_run", f"no run {run_id!r}")
        events = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                events.append(json.loads(line))
        return events

    def run_status_doc(self, run_id: str) -> dict:
        run = self.registry.get(run_id)
        meta = self.registry.meta(run_id)
        if run is not None:
            with run.lock:
                doc = {
                    "run_id": run.run_id,
                    "graph": run.graph.name,
                    "status": run.status.value,
                    "node_status": dict(run.node_status),
                    "branches": dict(run.branches),
                    "event_count": len(run.events),
                }
                if run.note:
                    doc["note"] = run.note
                if run.pending_approval:
                    exposed = list(run.pending_approval["exposed"])
                    doc["pending_approval"] = {
                        "node_id": run.pending_approval["node_id"],
                        "exposed": exposed,
                        # Payloads too, so a reviewer can see what they are
                        # deciding on without a separate object store route.
                        "objects": [
                            {
                                "hash": h,
                                "schema": run.store[h].schema,
                                "payload": run.store[h].payload,
                            }
                            for h in exposed
                            if h in run.store
                        ],
                    }
                if run.status in (RunStatus.SUCCEEDED, RunStatus.FAILED, RunStatus.CANCELLED):
                    doc["exit_code"] = run_exit_code(run)
                return doc
        if meta is not None and "startup_error" in meta:
            return {
                "run_id": run_id,
                "graph": meta.get("graph"),
                "status": "failed",
                "note": meta["startup_error"],
                "event_count": 0,
            }
        if meta is not None:
            # reserved but the worker thread has not attached yet
            path = self.runs_dir / f"{run_id}.events.jsonl"
            if not path.is_file():
                return {"run_id": run_id, "graph": meta.get("graph"), "status": "pending"}
        # Fall back to the durable log (covers restarts).
        events = self.events_from_disk(run_id)
        status = "running"
        note = None
        awaiting = False
        for event in events:
            if event["kind"] == "approval_requested":
                awaiting = True
            elif event["kind"] == "approval_received":
                awaiting = False
            elif event["kind"] == "run_finished":
                status = event.get("detail", {}).get("status", "failed")
                note = event.get("detail", {}).get("note")
        if status == "running" and awaiting:
            status = "awaiting_approval"
        doc = {
            "run_id": run_id,
            "status": status,
            "event_count": len(events),
            "resumable": False,
        }
        if note:
            doc["note"] = note
        return doc


# ---------------------------------------------------------------------------
# request plumbing


async def read_json_body(request: Request) -> dict:
    content_type = request.headers.get("content-type", "")
    if content_type and "application/json" not in content_type:
        raise ApiError(
            "unsupported_media_type", f"expected application/json, got {content_type!r}"
        )
    try:
        body = await request.json()
    except json.JSONDecodeError as exc:
        raise ApiError("invalid_request", f"body is not valid JSON: {exc.msg}") from exc
    if not isinstance(body, dict):
        raise ApiError("invalid_request", "body must be a JSON object")
    return body


def parse_binding(node_id: str, doc) -> Binding:
    if not isinstance(doc, dict):
        raise ApiError("invalid_request", f"binding for {node_id!r} must be an object")
    keys = set(doc) & {"text", "path", "base64"}
    if len(keys) != 1:
        raise ApiError(
            "invalid_request",
            f"binding for {node_id!r} needs exactly one of text, path or base64",
        )
    if "text" in doc:
        return Binding(text=str(doc["text"]))
    if "path" in doc:
        return Binding(path=str(doc["path"]))
    import base64 as b64

    try:
        return Binding(data=b64.b64decode(doc["base64"], validate=True))
    except (ValueError, TypeError) as exc:
        raise ApiError("invalid_request", f"binding for {node_id!r}: bad base64") from exc


def engine_error_to_api(exc: Exception) -> ApiError:
    if isinstance(exc, InvalidGraph):
        return ApiError("invalid_graph", str(exc))
    if isinstance(exc, (UnboundInput, ArtifactMissing)):
        return ApiError("unbound_input", str(exc))
    if isinstance(exc, WrongState):
        return ApiError("wrong_state", str(exc))
    if isinstance(exc, RunNotTerminal):
        return ApiError("wrong_state", str(exc))
    if isinstance(exc, AgentError):
        return ApiError("endpoint_error", str(exc))
    raise exc


# ---------------------------------------------------------------------------
# app factory


def create_app(config: ServiceConfig) -> FastAPI:
    service = Service(config)
    app = FastAPI(title="telehub", docs_url=None, redoc_url=None, openapi_url=None)
    app.state.service = service

    @app.exception_handler(ApiError)
    async def on_api_error(_request: Request, exc: ApiError):
        return exc.response()

    @app.middleware("http")
    async def auth_middleware(request: Request, call_next):
        token = service.config.auth_token
        open_prefixes = ("/ui", "/healthz")
        if token and not any(request.url.path.startswith(p) for p in open_prefixes):
            header = request.headers.get("authorization", "")
            if header != f"Bearer {token}":
                return ApiError("unauthorized", "missing or wrong bearer token").response()
        return await call_next(request)

    # -- meta ----------------------------------------------------------

    @app.get("/healthz")
    async def healthz():
        return {"ok": True}

    @app.get("/schemas")
    async def schemas():
        return {"registry": REGISTRY_ID, "document": registry_document()}

    # -- graphs ----------------------------------------------------------

    @app.get("/graphs")
    async def list_graphs():
        return {"graphs": service.list_graph_names()}

    @app.post("/graphs", status_code=201)
    async def create_graph(request: Request):
        doc = await read_json_body(request)
        graph = await run_in_threadpool(service.store_graph, doc)
        return {"name": graph.name}

    @app.get("/graphs/{name}")
    async def get_graph(name: str):
        return service.load_graph_document(name)

    # -- prebuilt catalog -------------------------------------------------

    @app.get("/prebuilt")
    async def list_prebuilt():
        return {"prebuilt": [e.describe() for e in prebuilt_catalog.list_prebuilt()]}

    @app.post("/prebuilt/{prebuilt_id}/instantiate")
    async def instantiate_prebuilt(prebuilt_id: str):
        try:
            entry = prebuilt_catalog.get_prebuilt(prebuilt_id)
        except prebuilt_catalog.UnknownPrebuilt as exc:
            raise ApiError("unknown_prebuilt", str(exc)) from exc
        doc = prebuilt_catalog.graph_document(entry)
        existing = service.graph_path(entry.id).is_file()
        if not existing:
            await run_in_threadpool(service.store_graph, doc)
        bindings = {
            node_id: {"text": prebuilt_catalog.fixture_text(rel)}
            for node_id, rel in entry.bindings.items()
        }
        variants = {
            name: {
                node_id: {"text": prebuilt_catalog.fixture_text(rel)}
                for node_id, rel in overrides.items()
            }
            for name, overrides in entry.variants.items()
        }
        return {
            "graph": entry.id,
            "created": not existing,
            "bindings": bindings,
            "variants": variants,
        }

    # -- runs --------------------------------------------------------------

    @app.post("/runs", status_code=202)
    async def create_run(request: Request):
        body = await read_json_body(request)
        graph_name = body.get("graph")
        if not isinstance(graph_name, str):
            raise ApiError("invalid_request", "field 'graph' (string) is required")
        graph = await run_in_threadpool(service.load_graph, graph_name)
        raw_bindings = body.get("bindings", {})
        if not isinstance(raw_bindings, dict):
            raise ApiError("invalid_request", "field 'bindings' must be an object")
        bindings = {
            node_id: parse_binding(node_id, doc) for node_id, doc in raw_bindings.items()
        }
        # Surface unbound inputs now rather than from the worker thread.
        for node in graph.nodes:
            if node.kind.value == "input" and node.id not in bindings:
                raise ApiError("unbound_input", f"input node {node.id!r} has no binding")
        for node_id, binding in bindings.items():
            if binding.path is not None and not Path(binding.path).is_file():
                raise ApiError(
                    "unbound_input", f"artifact for {node_id!r} not found: {binding.path}"
                )
        run_id = service.start_run_async(graph, bindings)
        return {"run_id": run_id, "status": "pending"}

    @app.get("/runs")
    async def list_runs():
        docs = []
        seen = set()
        for run_id in service.registry.ids():
            docs.append(service.run_status_doc(run_id))
            seen.add(run_id)
        for path in sorted(service.runs_dir.glob("*.events.jsonl")):
            run_id = path.name.removesuffix(".events.jsonl")
            if run_id not in seen:
                docs.append(service.run_status_doc(run_id))
        return {"runs": docs}

    @app.get("/runs/{run_id}")
    async def run_status(run_id: str):
        return service.run_status_doc(run_id)

    @app.get("/runs/{run_id}/events")
    async def run_events(run_id: str, since: int = 0):
        run = service.registry.get(run_id)
        if run is not None:
            with run.lock:
                docs = [e.to_doc() for e in run.events if e.seq > since]
        else:
            docs = [e for e in service.events_from_disk(run_id) if e["seq"] > since]
        page = docs[:EVENT_PAGE_SIZE]
        next_since = page[-1]["seq"] if page else since
        return {"events": page, "next_since": next_since, "complete": len(docs) <= len(page)}

    @app.post("/runs/{run_id}/approval")
    async def post_approval(run_id: str, request: Request):
        body = await read_json_body(request)
        run = service.registry.get(run_id)
        if run is None:
            meta = service.registry.meta(run_id)
            if meta is None:
                # A restarted server still knows the log; resuming is another
                # matter, and claiming wrong run id would be a lie.
                service.events_from_disk(run_id)
                raise ApiError(
                    "wrong_state", f"run {run_id!r} is not resumable after a restart"
                )
            raise ApiError("wrong_state", f"run {run_id!r} has not started executing yet")
        approved = body.get("approved")
        if not isinstance(approved, bool):
            raise ApiError("invalid_flag", "field 'approved' (boolean) is required")
        reviewer = body.get("reviewer")
        if not isinstance(reviewer, str) or not reviewer:
            raise ApiError("invalid_flag", "field 'reviewer' (non-empty string) is required")
        comment = body.get("comment", "")
        if not isinstance(comment, str):
            raise ApiError("invalid_flag", "field 'comment' must be a string")
        decided_at_us = body.get("decided_at_us", 0)
        if not isinstance(decided_at_us, int) or isinstance(decided_at_us, bool):
            raise ApiError("invalid_flag", "field 'decided_at_us' must be an integer")

        def work():
            try:
                service.engine.resolve_approval(
                    run,
                    approved=approved,
                    reviewer=reviewer,
                    comment=comment,
                    decided_at_us=decided_at_us,
                )
            except Exception as exc:
                raise engine_error_to_api(exc) from exc

        await run_in_threadpool(work)
        return service.run_status_doc(run_id)

    @app.get("/runs/{run_id}/report")
    async def run_report(run_id: str):
        run = service.registry.get(run_id)
        if run is None:
            service.events_from_disk(run_id)  # 404 when the run never existed
            raise ApiError(
                "wrong_state", f"run {run_id!r} predates a restart; only its events remain"
            )
        try:
            with run.lock:
                return export_report(run)
        except RunNotTerminal as exc:
            raise engine_error_to_api(exc) from exc

    # -- chat ---------------------------------------------------------------

    @app.post("/chat")
    async def chat(request: Request):
        body = await read_json_body(request)
        agent_id = body.get("agent_id")
        if not isinstance(agent_id, str):
            raise ApiError("invalid_request", "field 'agent_id' (string) is required")
        message = body.get("message")
        if not isinstance(message, str) or not message:
            raise ApiError("invalid_request", "field 'message' (non-empty string) is required")
        history = body.get("history", [])
        if not isinstance(history, list):
            raise ApiError("invalid_request", "field 'history' must be a list")
        spec = service.get_agent(agent_id)
        messages = []
        if spec.system_prompt:
            messages.append(ChatMessage("system", spec.system_prompt))
        for i, turn in enumerate(history):
            if (
                not isinstance(turn, dict)
                or turn.get("role") not in ("user", "assistant")
                or not isinstance(turn.get("content"), str)
            ):
                raise ApiError("invalid_request", f"history[{i}] needs role and content")
            messages.append(ChatMessage(turn["role"], turn["content"]))
        messages.append(ChatMessage("user", message))

        def work():
            try:
                return invoke_agent(
                    spec,
                    messages,
                    endpoints=service.config.endpoints,
                    force_mock=service.config.agent_mode == "mock",
                )
            except Exception as exc:
                raise engine_error_to_api(exc) from exc

        reply = await run_in_threadpool(work)
        return {
            "agent_id": agent_id,
            "content": reply.content,
            "prompt_tokens": reply.prompt_tokens,
            "completion_tokens": reply.completion_tokens,
            "latency_ms": reply.latency_ms,
        }

    # -- static UI -----------------------------------------------------------

    ui_dir = Path(config.ui_dir) if config.ui_dir else None
    if ui_dir and ui_dir.is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
