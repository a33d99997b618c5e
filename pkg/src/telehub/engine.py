"""Run execution: event-sourced, pausable, deterministic under mocks.

A run walks the graph's topological order node by node. Everything a node
produces is published into an append-only, content-addressed store, and
every state change is an event with a gapless sequence number. The event
log plus the store fully determine the report; nothing about a finished run
lives anywhere else.

Human approval is the one place a run parks: the conditional exposes the
pending objects, the run waits in awaiting_approval, and a later decision
resumes it (the resume path re-enters the same execution loop; nothing is
special-cased beyond the pause itself). Rejection publishes a rework
artifact carrying the reviewer's comment and the rejected object's hash,
so a denied flow leaves a traceable record instead of vanishing.

Branches not taken never execute: a node whose every inbound edge hangs off
a dead branch is skipped without events. Node failures are recorded as
node_error and end the run as failed; silent partial successes are worse
than loud stops.
"""

from __future__ import annotations

import base64
import json
import re
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import agents as agentlib
from .agents import (
    EXPECTED_STEP_MARKER,
    VERDICT_INSTRUCTION,
    WINDOW_MARKER,
    AgentReply,
    AgentSpec,
    ChatMessage,
    EndpointConfig,
    VerdictParseError,
    levenshtein,  # noqa: F401  (re-exported for report tooling)
    parse_verdict,
    render_prompt,
)
from .context import (
    ContextObject,
    LineageUnknown,
    canonical_json_bytes,
    make_object,
)
from .graph import (
    AgentNodeConfig,
    ConditionalConfig,
    Diagnostic,
    InputConfig,
    LogicConfig,
    NodeKind,
    NodeSpec,
    TeleMcpConfig,
    WorkflowGraph,
    graph_hash,
    topo_order,
    validate_graph,
)
from .ingest import extract_message_records, parse_decoded_trace, parse_srsran_log

EVENT_KINDS = (
    "run_started",
    "node_started",
    "node_finished",
    "object_published",
    "agent_invoked",
    "approval_requested",
    "approval_received",
    "branch_taken",
    "node_error",
    "run_finished",
)

DEFAULT_WINDOW_SIZE = 20
DEFAULT_STRIDE = 10
DEFAULT_CONFIDENCE_THRESHOLD = 0.7
DEFAULT_TOP_K = 5


class RunStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    AWAITING_APPROVAL = "awaiting_approval"
    SUCCEEDED = "succeeded"
    FAILED = "failed"
    CANCELLED = "cancelled"


TERMINAL_STATUSES = (RunStatus.SUCCEEDED, RunStatus.FAILED, RunStatus.CANCELLED)


class EngineError(Exception):
    pass


class InvalidGraph(EngineError):
    def __init__(self, diagnostics: list[Diagnostic]):
        super().__init__("; ".join(str(d) for d in diagnostics[:4]))
        self.diagnostics = diagnostics


class UnboundInput(EngineError):
    def __init__(self, node_id: str):
        super().__init__(f"input node {node_id!r} has no bound artifact")
        self.node_id = node_id


class ArtifactMissing(EngineError):
    def __init__(self, node_id: str, path: str):
        super().__init__(f"artifact for {node_id!r} not found: {path}")
        self.node_id = node_id
        self.path = path


class WrongState(EngineError):
    def __init__(self, run_id: str, status: RunStatus):
        super().__init__(f"run {run_id} is {status.value}, not awaiting approval")
        self.status = status


class InvalidFlag(EngineError):
    pass


class UnknownScript(EngineError):
    def __init__(self, ref: str):
        super().__init__(f"no registered script {ref!r}")
        self.ref = ref


class MissingBranchPort(EngineError):
    def __init__(self, node_id: str, branch: str):
        super().__init__(f"conditional {node_id!r} has no branch port {branch!r}")
        self.branch = branch


class RunNotTerminal(EngineError):
    def __init__(self, status: RunStatus):
        super().__init__(f"run is {status.value}; reports need a terminal run")
        self.status = status


@dataclass(frozen=True)
class RunEvent:
    """One audit-log entry. seq is gapless from 1 within a run."""

    seq: int
    at_us: int
    kind: str
    node_id: str | None = None
    detail: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        doc: dict = {"seq": self.seq, "at_us": self.at_us, "kind": self.kind}
        if self.node_id is not None:
            doc["node_id"] = self.node_id
        if self.detail:
            doc["detail"] = self.detail
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> RunEvent:
        return cls(
            seq=doc["seq"],
            at_us=doc["at_us"],
            kind=doc["kind"],
            node_id=doc.get("node_id"),
            detail=doc.get("detail", {}),
        )


@dataclass
class ValidationSummary:
    aggregate: str  # pass | fail | partial
    per_step: list[dict]
    windows_examined: int


@dataclass(frozen=True)
class Binding:
    """An artifact bound to an input node: inline text/bytes or a file path."""

    text: str | None = None
    data: bytes | None = None
    path: str | None = None

    def load(self, node_id: str) -> str | bytes:
        if self.text is not None:
            return self.text
        if self.data is not None:
            return self.data
        if self.path is not None:
            p = Path(self.path)
            if not p.is_file():
                raise ArtifactMissing(node_id, self.path)
            raw = p.read_bytes()
            try:
                return raw.decode("utf-8")
            except UnicodeDecodeError:
                return raw
        raise UnboundInput(node_id)


@dataclass
class Run:
    run_id: str
    graph: WorkflowGraph
    order: list[str]
    bindings: dict[str, Binding]
    status: RunStatus = RunStatus.PENDING
    position: int = 0
    events: list[RunEvent] = field(default_factory=list)
    store: dict[str, ContextObject] = field(default_factory=dict)
    published: list[tuple[str, str, str]] = field(default_factory=list)  # (node, port, hash)
    outputs: dict[tuple[str, str], list[ContextObject]] = field(default_factory=dict)
    node_status: dict[str, str] = field(default_factory=dict)  # idle|done|skipped|error
    branches: dict[str, str] = field(default_factory=dict)
    pending_approval: dict | None = None
    note: str | None = None
    lock: threading.RLock = field(default_factory=threading.RLock)

    def port_objects(self, node_id: str, port: str) -> list[ContextObject]:
        return self.outputs.get((node_id, port), [])


def wall_clock_us() -> int:
    return time.time_ns() // 1000


class Engine:
    """Executes runs against a fixed agent mode and endpoint table.

    agent_mode "mock" forces every agent call through the deterministic
    mocks regardless of endpoint_ref, which keeps test runs fully offline.
    """

    def __init__(
        self,
        *,
        agent_mode: str = "mock",
        endpoints: dict[str, EndpointConfig] | None = None,
        clock=wall_clock_us,
        runs_dir: str | Path | None = None,
        scripts: dict | None = None,
        approval_deadline_s: float | None = None,
    ):
        if agent_mode not in ("mock", "live"):
            raise EngineError(f"agent_mode must be mock or live, got {agent_mode!r}")
        self.agent_mode = agent_mode
        self.endpoints = endpoints or {}
        self.clock = clock
        self.runs_dir = Path(runs_dir) if runs_dir else None
        self.scripts = scripts or {}
        self.approval_deadline_s = approval_deadline_s
        self._timers: dict[str, threading.Timer] = {}

    # ------------------------------------------------------------------
    # lifecycle

    def start_run(
        self,
        graph: WorkflowGraph,
        bindings: dict[str, Binding] | None = None,
        *,
        run_id: str | None = None,
    ) -> Run:
        """Validate, bind, and execute until the run parks or finishes."""
        diagnostics = validate_graph(graph)
        if diagnostics:
            raise InvalidGraph(diagnostics)
        bindings = dict(bindings or {})
        for node in graph.nodes:
            if node.kind is not NodeKind.INPUT:
                continue
            binding = bindings.get(node.id)
            if binding is None or (
                binding.text is None and binding.data is None and binding.path is None
            ):
                raise UnboundInput(node.id)
            if binding.text is None and binding.data is None and not Path(binding.path).is_file():
                raise ArtifactMissing(node.id, binding.path)

        run = Run(
            run_id=run_id or f"run-{uuid.uuid4().hex[:12]}",
            graph=graph,
            order=topo_order(graph),
            bindings=bindings,
        )
        run.node_status = {n.id: "idle" for n in graph.nodes}
        with run.lock:
            run.status = RunStatus.RUNNING
            self._event(
                run,
                "run_started",
                None,
                {"graph_name": graph.name, "graph_hash": graph_hash(graph)},
            )
            self._execute(run)
        return run

    def execute(self, run: Run) -> Run:
        """Resume a running run (used after external state changes)."""
        with run.lock:
            if run.status is not RunStatus.RUNNING:
                raise WrongState(run.run_id, run.status)
            self._execute(run)
        return run

    def resolve_approval(
        self,
        run: Run,
        *,
        approved: bool,
        reviewer: str,
        comment: str = "",
        decided_at_us: int = 0,
    ) -> Run:
        """Apply a human decision to a parked run and resume it."""
        with run.lock:
            if run.status is not RunStatus.AWAITING_APPROVAL or run.pending_approval is None:
                raise WrongState(run.run_id, run.status)
            if not isinstance(approved, bool):
                raise InvalidFlag("approved must be a boolean")
            if not isinstance(reviewer, str) or not reviewer or any(c.isspace() for c in reviewer):
                raise InvalidFlag("reviewer must be a non-empty token")

            timer = self._timers.pop(run.run_id, None)
            if timer:
                timer.cancel()

            node_id = run.pending_approval["node_id"]
            exposed = run.pending_approval["exposed"]
            node = run.graph.node(node_id)
            assert node is not None

            flag_payload = {
                "approved": approved,
                "reviewer": reviewer,
                "comment": comment,
                "decided_at_us": decided_at_us,
            }
            flag = self._publish(
                run, node_id, "flag", "approval-flag", flag_payload, parents=tuple(exposed)
            )
            self._event(
                run, "approval_received", node_id, {"approved": approved, "reviewer": reviewer}
            )

            subject = [run.store[h] for h in exposed]
            run.pending_approval = None
            run.status = RunStatus.RUNNING

            if approved:
                self._take_branch(run, node, "approve", subject)
                self._event(run, "node_finished", node_id)
                run.node_status[node_id] = "done"
                run.position += 1
                self._execute(run)
                return run

            # Rejection leaves a rework artifact behind; the rejected object
            # stays findable by hash.
            connected = any(
                e.from_node == node_id and e.from_port == "reject" for e in run.graph.edges
            )
            self._event(run, "branch_taken", node_id, {"branch": "reject", "connected": connected})
            run.branches[node_id] = "reject"
            rejected_hashes = ", ".join(exposed)
            rework_text = (
                f"rework requested by {reviewer}: {comment or '(no comment)'}\n"
                f"rejected: {rejected_hashes}"
            )
            rework = self._publish(
                run,
                node_id,
                "reject",
                "text-blob",
                {"text": rework_text},
                parents=tuple(exposed) + (flag.hash,),
                record_output=False,
            )
            run.node_status[node_id] = "done"
            self._event(run, "node_finished", node_id)
            if not connected:
                self._finish(run, RunStatus.FAILED, note="rejected")
                return run
            run.outputs[(node_id, "reject")] = [rework]
            run.position += 1
            self._execute(run)
            return run

    def cancel(self, run: Run, *, note: str = "cancelled") -> None:
        with run.lock:
            if run.status in TERMINAL_STATUSES:
                return
            self._finish(run, RunStatus.CANCELLED, note=note)

    # ------------------------------------------------------------------
    # event and store plumbing

    def _event(self, run: Run, kind: str, node_id: str | None, detail: dict | None = None) -> None:
        event = RunEvent(
            seq=len(run.events) + 1,
            at_us=self.clock(),
            kind=kind,
            node_id=node_id,
            detail=detail or {},
        )
        run.events.append(event)
        if self.runs_dir is not None:
            self.runs_dir.mkdir(parents=True, exist_ok=True)
            path = self.runs_dir / f"{run.run_id}.events.jsonl"
            with path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(event.to_doc(), sort_keys=True, separators=(",", ":")))
                fh.write("\n")

    def _publish(
        self,
        run: Run,
        node_id: str,
        port: str,
        schema: str,
        payload: dict,
        *,
        parents: tuple[str, ...] = (),
        partial: bool = False,
        record_output: bool = True,
    ) -> ContextObject:
        for parent in parents:
            if parent not in run.store:
                raise LineageUnknown(parent)
        obj = make_object(
            schema,
            payload,
            source_node_id=node_id,
            run_id=run.run_id,
            created_at_us=self.clock(),
            parents=parents,
            partial=partial,
        )
        run.store.setdefault(obj.hash, obj)
        run.published.append((node_id, port, obj.hash))
        if record_output:
            run.outputs.setdefault((node_id, port), []).append(obj)
        self._event(
            run, "object_published", node_id, {"hash": obj.hash, "schema": schema, "port": port}
        )
        return obj

    def _finish(self, run: Run, status: RunStatus, *, note: str | None = None) -> None:
        run.status = status
        if note:
            run.note = note
        detail: dict = {"status": status.value}
        if run.note:
            detail["note"] = run.note
        self._event(run, "run_finished", None, detail)
        timer = self._timers.pop(run.run_id, None)
        if timer:
            timer.cancel()

    # ------------------------------------------------------------------
    # execution loop

    def _execute(self, run: Run) -> None:
        while run.position < len(run.order):
            node_id = run.order[run.position]
            node = run.graph.node(node_id)
            assert node is not None
            if self._should_skip(run, node):
                run.node_status[node_id] = "skipped"
                run.position += 1
                continue
            self._event(run, "node_started", node_id)
            try:
                paused = self._exec_node(run, node)
            except Exception as exc:  # recorded, never silent
                self._event(
                    run,
                    "node_error",
                    node_id,
                    {"error": type(exc).__name__, "message": str(exc)},
                )
                run.node_status[node_id] = "error"
                self._finish(run, RunStatus.FAILED, note=f"{node_id}: {exc}")
                return
            if paused:
                return
            run.node_status[node_id] = "done"
            if node.kind is not NodeKind.OUTPUT:
                self._event(run, "node_finished", node_id)
            run.position += 1
        self._finish(run, RunStatus.SUCCEEDED)

    def _should_skip(self, run: Run, node: NodeSpec) -> bool:
        # Port-level starvation: a node is skipped when any wired in-port has
        # lost every feeding edge to a dead branch or skipped source. One live
        # edge per port is enough, so diamond rejoins (a sink fed from both
        # sides of a conditional) still execute.
        in_edges = run.graph.in_edges(node.id)
        if node.kind is NodeKind.INPUT or not in_edges:
            return False
        by_port: dict[str, list] = {}
        for e in in_edges:
            by_port.setdefault(e.to_port, []).append(e)
        return any(
            all(self._edge_dead(run, e) for e in edges) for edges in by_port.values()
        )

    def _edge_dead(self, run: Run, edge) -> bool:
        if run.node_status.get(edge.from_node) == "skipped":
            return True
        branch = run.branches.get(edge.from_node)
        if branch is not None and edge.from_port != branch:
            return True
        return False

    def _gather(self, run: Run, node: NodeSpec, port: str) -> list[ContextObject]:
        objs: list[ContextObject] = []
        for e in run.graph.in_edges(node.id):
            if e.to_port != port or self._edge_dead(run, e):
                continue
            objs.extend(run.port_objects(e.from_node, e.from_port))
        return objs

    def _context_map(self, run: Run, node: NodeSpec) -> dict:
        """Upstream objects keyed by source node id, for prompt templates."""
        ctx: dict = {}
        for e in run.graph.in_edges(node.id):
            if self._edge_dead(run, e):
                continue
            objs = run.port_objects(e.from_node, e.from_port)
            if not objs:
                continue
            ctx[e.from_node] = objs[0] if len(objs) == 1 else list(objs)
        return ctx

    def _exec_node(self, run: Run, node: NodeSpec) -> bool:
        """Returns True when the run parked (awaiting approval)."""
        if node.kind is NodeKind.INPUT:
            self._exec_input(run, node)
        elif node.kind is NodeKind.AGENT:
            self._exec_agent(run, node)
        elif node.kind is NodeKind.TELEMCP:
            self._exec_telemcp(run, node)
        elif node.kind is NodeKind.LOGIC:
            self._exec_logic(run, node)
        elif node.kind is NodeKind.CONDITIONAL:
            return self._exec_conditional(run, node)
        elif node.kind is NodeKind.OUTPUT:
            self._exec_output(run, node)
        return False

    # ------------------------------------------------------------------
    # node executors

    def _exec_input(self, run: Run, node: NodeSpec) -> None:
        config = node.config if isinstance(node.config, InputConfig) else InputConfig()
        content = run.bindings[node.id].load(node.id)
        if config.media_type == "pcap":
            raw = content if isinstance(content, bytes) else content.encode("utf-8")
            payload = {"text": base64.b64encode(raw).decode("ascii")}
            self._publish(run, node.id, "artifact", "text-blob", payload)
            return
        if isinstance(content, bytes):
            content = content.decode("utf-8", errors="replace")
        if config.media_type == "flow-json":
            payload = json.loads(content)
            self._publish(run, node.id, "artifact", "procedural-flow", payload)
            return
        self._publish(run, node.id, "artifact", "text-blob", {"text": content})

    def _invoke(self, run: Run, node_id: str, spec: AgentSpec, messages: list[ChatMessage], detail
                ) -> AgentReply:
        reply = agentlib.invoke_agent(
            spec,
            messages,
            endpoints=self.endpoints,
            force_mock=self.agent_mode == "mock",
        )
        self._event(
            run, "agent_invoked", node_id, {"agent_id": spec.id, "role": spec.role, **detail}
        )
        return reply

    def _exec_agent(self, run: Run, node: NodeSpec) -> None:
        config = node.config
        assert isinstance(config, AgentNodeConfig)
        ctx = self._context_map(run, node)
        if config.prompt_template:
            user_text = render_prompt(config.prompt_template, ctx)
        else:
            parts = []
            for key in ctx:
                value = ctx[key]
                objs = value if isinstance(value, list) else [value]
                parts.extend(canonical_json_bytes(o.payload).decode("utf-8") for o in objs)
            user_text = "\n\n".join(parts)
        messages = []
        if config.agent.system_prompt:
            messages.append(ChatMessage("system", config.agent.system_prompt))
        messages.append(ChatMessage("user", user_text))

        reply = self._invoke(run, node.id, config.agent, messages, {})

        parents = []
        for value in ctx.values():
            objs = value if isinstance(value, list) else [value]
            parents.extend(o.hash for o in objs)

        if config.output_schema:
            payload = json.loads(reply.content)
            self._publish(
                run, node.id, "reply", config.output_schema, payload, parents=tuple(parents)
            )
        else:
            self._publish(
                run, node.id, "reply", "text-blob", {"text": reply.content}, parents=tuple(parents)
            )

    def _map_records(self, mapper: str, text: str, invert: bool) -> list:
        if mapper == "decoded-trace":
            return parse_decoded_trace(text)
        parsed = parse_srsran_log(text)
        return extract_message_records(parsed, invert_direction=invert)

    def _exec_telemcp(self, run: Run, node: NodeSpec) -> None:
        config = node.config
        assert isinstance(config, TeleMcpConfig)
        blobs = self._gather(run, node, "raw")
        records = []
        for blob in blobs:
            for record in self._map_records(
                config.mapper, blob.payload.get("text", ""), config.invert_direction
            ):
                records.append((record, blob.hash))
        self._publish_records(run, node.id, "objects", records, config.selector_paths)

    def _publish_records(self, run, node_id, port, records_with_parent, selector_paths) -> None:
        # Reindex to positions so windows can slice by position later.
        keep = set()
        if selector_paths:
            for path in selector_paths:
                keep.add(path.split(".")[0])
        for position, (record, parent) in enumerate(records_with_parent):
            payload = record.to_payload()
            payload["index"] = position
            if selector_paths:
                payload = {k: v for k, v in payload.items() if k in keep}
            self._publish(
                run,
                node_id,
                port,
                "message-record",
                payload,
                parents=(parent,),
                partial=bool(selector_paths),
            )

    def _exec_logic(self, run: Run, node: NodeSpec) -> None:
        config = node.config
        assert isinstance(config, LogicConfig)
        if config.builtin == "pcap-processing":
            self._exec_pcap_processing(run, node, config)
        elif config.builtin == "sliding-window-validation":
            self._exec_validation(run, node, config)
        elif config.builtin == "keyword-retrieval":
            self._exec_retrieval(run, node, config)
        else:
            self._exec_custom(run, node, config)

    def _exec_pcap_processing(self, run: Run, node: NodeSpec, config: LogicConfig) -> None:
        decoded_blobs = self._gather(run, node, "decoded")
        log_blobs = self._gather(run, node, "log")
        if not decoded_blobs and not log_blobs:
            raise EngineError("pcap-processing needs a decoded trace or a log bound")
        invert = bool(config.params.get("invert_direction", False))
        tagged = []  # (timestamp, source_rank, arrival, record, parent_hash)
        arrival = 0
        for blob in decoded_blobs:
            for record in parse_decoded_trace(blob.payload.get("text", "")):
                tagged.append((record.timestamp_us, 0, arrival, record, blob.hash))
                arrival += 1
        for blob in log_blobs:
            parsed = parse_srsran_log(blob.payload.get("text", ""))
            for record in extract_message_records(parsed, invert_direction=invert):
                tagged.append((record.timestamp_us, 1, arrival, record, blob.hash))
                arrival += 1
        # Merge by timestamp; decoded-trace records win ties so the richer
        # source leads when both saw the same instant.
        tagged.sort(key=lambda t: (t[0], t[1], t[2]))
        self._publish_records(
            run, node.id, "records", [(r, p) for _, _, _, r, p in tagged], config.selector_paths
        )

    def _exec_validation(self, run: Run, node: NodeSpec, config: LogicConfig) -> None:
        flows = self._gather(run, node, "flow")
        if not flows:
            raise EngineError("sliding-window-validation needs a procedural flow")
        flow = flows[0]
        trace = self._gather(run, node, "trace")
        record_payloads = [o.payload for o in trace]
        record_hashes = [o.hash for o in trace]
        spec = config.agent
        assert spec is not None  # enforced by validate_graph

        params = config.params
        window_size = params.get("window_size", DEFAULT_WINDOW_SIZE)
        stride = params.get("stride", DEFAULT_STRIDE)
        max_windows = params.get("max_windows_per_step")
        threshold = params.get("confidence_threshold", DEFAULT_CONFIDENCE_THRESHOLD)

        steps = flow.payload["steps"]
        total = len(record_payloads)
        w = 0
        per_step: list[dict] = []
        windows_examined = 0
        any_not_found = False

        source_id = trace[0].provenance.source_node_id if trace else node.id

        for step in steps:
            attempts = 0
            while True:
                start = min(w, total)
                end = min(start + window_size, total)
                window_payload = {
                    "source_id": source_id,
                    "start_index": start,
                    "end_index": end,
                    "records": record_payloads[start:end],
                }
                window_obj = self._publish(
                    run,
                    node.id,
                    "window",
                    "log-window",
                    window_payload,
                    parents=tuple(record_hashes[start:end]),
                    partial=True,
                    record_output=False,
                )
                windows_examined += 1

                user_text = self._val_prompt(config, flow, step, window_payload)
                messages = []
                if spec.system_prompt:
                    messages.append(ChatMessage("system", spec.system_prompt))
                messages.append(ChatMessage("user", user_text))

                detail = {"step_no": step["step_no"], "window_start": start, "window_end": end}
                reply = self._invoke(run, node.id, spec, messages, detail)

                parsed = None
                try:
                    parsed = parse_verdict(reply.content)
                except VerdictParseError as exc:
                    # A reply we cannot read is a failed attempt, not a crash.
                    self._event(
                        run,
                        "agent_invoked",
                        node.id,
                        {
                            "agent_id": spec.id,
                            "role": spec.role,
                            "note": f"verdict_parse_error: {type(exc).__name__}",
                            **detail,
                        },
                    )

                if parsed is not None and parsed.status == "found":
                    verdict_payload = {
                        "status": "found",
                        "explanation": parsed.explanation,
                        "confidence": parsed.confidence,
                        "step_no": step["step_no"],
                        "window_start": start,
                        "window_end": end,
                    }
                    self._publish(
                        run,
                        node.id,
                        "verdicts",
                        "validation-verdict",
                        verdict_payload,
                        parents=(window_obj.hash, flow.hash),
                    )
                    per_step.append(verdict_payload)
                    break  # next step, same w

                w += stride
                attempts += 1
                if w >= total or (max_windows is not None and attempts >= max_windows):
                    verdict_payload = {
                        "status": "not_found",
                        "explanation": "window exhausted",
                        "confidence": 0.0,
                        "step_no": step["step_no"],
                        "window_start": start,
                        "window_end": end,
                    }
                    self._publish(
                        run,
                        node.id,
                        "verdicts",
                        "validation-verdict",
                        verdict_payload,
                        parents=(window_obj.hash, flow.hash),
                    )
                    per_step.append(verdict_payload)
                    any_not_found = True
                    break  # next step at current w; w never decreases

        if any_not_found:
            aggregate = "fail"
        elif any(v["confidence"] < threshold for v in per_step):
            aggregate = "partial"
        else:
            aggregate = "pass"

        summary_doc = {
            "aggregate": aggregate,
            "windows_examined": windows_examined,
            "per_step": per_step,
            "steps": steps,
            "record_names": [p["name"] for p in record_payloads if "name" in p],
        }
        verdict_hashes = [
            h for (nid, port, h) in run.published if nid == node.id and port == "verdicts"
        ]
        self._publish(
            run,
            node.id,
            "summary",
            "text-blob",
            {"text": canonical_json_bytes(summary_doc).decode("utf-8")},
            parents=(flow.hash, *verdict_hashes),
        )

    def _val_prompt(self, config: LogicConfig, flow, step: dict, window_payload: dict) -> str:
        if config.prompt_template:
            lead = render_prompt(
                config.prompt_template, {"flow": flow, "step": step, "window": window_payload}
            )
        else:
            lead = "Check whether the expected protocol step occurs in the trace window."
        step_json = canonical_json_bytes(step).decode("utf-8")
        window_json = canonical_json_bytes(window_payload).decode("utf-8")
        return (
            f"{lead}\n\n{EXPECTED_STEP_MARKER} {step_json}\n"
            f"{WINDOW_MARKER} {window_json}\n\n{VERDICT_INSTRUCTION}"
        )

    def _exec_retrieval(self, run: Run, node: NodeSpec, config: LogicConfig) -> None:
        queries = self._gather(run, node, "query")
        docs = self._gather(run, node, "docs")
        if not queries:
            raise EngineError("keyword-retrieval needs a query")
        query_text = queries[0].payload.get("text", "")
        top_k = config.params.get("top_k", DEFAULT_TOP_K)
        ranked = rank_corpus(query_text, [d.payload.get("text", "") for d in docs], top_k)
        for doc_index, _score in ranked:
            blob = docs[doc_index]
            self._publish(
                run,
                node.id,
                "snippets",
                "text-blob",
                {"text": blob.payload.get("text", "")},
                parents=(queries[0].hash, blob.hash),
            )

    def _exec_custom(self, run: Run, node: NodeSpec, config: LogicConfig) -> None:
        ref = config.script_ref or ""
        callback = self.scripts.get(ref)
        if callback is None:
            raise UnknownScript(ref)
        inputs = {p.name: self._gather(run, node, p.name) for p in node.in_ports}
        results = callback(inputs) or {}
        for port, items in results.items():
            for schema, payload in items:
                self._publish(run, node.id, port, schema, payload)

    def _exec_conditional(self, run: Run, node: NodeSpec) -> bool:
        config = node.config
        assert isinstance(config, ConditionalConfig)
        subject = self._gather(run, node, "subject")
        if config.predicate == "human-approval":
            exposed = [o.hash for o in subject]
            run.pending_approval = {"node_id": node.id, "exposed": exposed}
            run.status = RunStatus.AWAITING_APPROVAL
            self._event(run, "approval_requested", node.id, {"exposed": exposed})
            if self.approval_deadline_s is not None:
                timer = threading.Timer(
                    self.approval_deadline_s, self._approval_deadline, args=(run,)
                )
                timer.daemon = True
                self._timers[run.run_id] = timer
                timer.start()
            return True

        # verdict-branch: route on the validation summary's aggregate.
        branch = self._aggregate_of(subject)
        if branch not in {p.name for p in node.out_ports}:
            if config.strict:
                raise MissingBranchPort(node.id, branch)
            self._event(run, "branch_taken", node.id, {"branch": branch, "connected": False})
            run.branches[node.id] = branch
            run.note = f"{node.id}: branch {branch!r} has no port; downstream skipped"
            return False
        self._take_branch(run, node, branch, subject)
        return False

    def _aggregate_of(self, subject: list[ContextObject]) -> str:
        for obj in subject:
            if obj.schema == "text-blob":
                try:
                    doc = json.loads(obj.payload.get("text", ""))
                except json.JSONDecodeError:
                    continue
                if isinstance(doc, dict) and doc.get("aggregate") in ("pass", "fail", "partial"):
                    return doc["aggregate"]
            if obj.schema == "validation-verdict":
                return "pass" if obj.payload.get("status") == "found" else "fail"
        raise EngineError("verdict-branch subject carries no validation summary")

    def _take_branch(self, run: Run, node: NodeSpec, branch: str, subject: list[ContextObject]):
        connected = any(
            e.from_node == node.id and e.from_port == branch for e in run.graph.edges
        )
        self._event(run, "branch_taken", node.id, {"branch": branch, "connected": connected})
        run.branches[node.id] = branch
        run.outputs[(node.id, branch)] = list(subject)
        if not connected:
            note = f"{node.id}: branch {branch!r} taken but unconnected"
            run.note = note

    def _exec_output(self, run: Run, node: NodeSpec) -> None:
        received = self._gather(run, node, "sink")
        self._event(
            run, "node_finished", node.id, {"received": [o.hash for o in received]}
        )

    def _approval_deadline(self, run: Run) -> None:
        with run.lock:
            if run.status is RunStatus.AWAITING_APPROVAL:
                run.pending_approval = None
                self._finish(run, RunStatus.CANCELLED, note="approval deadline expired")


# ---------------------------------------------------------------------------
# retrieval scoring


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric terms; everything else separates."""
    return re.findall(r"[a-z0-9]+", text.lower())


def rank_corpus(query: str, corpus: list[str], top_k: int) -> list[tuple[int, float]]:
    """(doc index, score) for the top_k docs, score-descending.

    score(doc) = sum over query terms of tf(term, doc) / (1 + |doc| in
    terms); repeated query terms count each time. Ties keep corpus order.
    """
    terms = tokenize(query)
    if not terms:
        raise EngineError("retrieval query has no terms")
    scored: list[tuple[int, float]] = []
    for i, doc in enumerate(corpus):
        doc_terms = tokenize(doc)
        denom = 1 + len(doc_terms)
        score = sum(doc_terms.count(t) / denom for t in terms)
        scored.append((i, score))
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[: min(top_k, len(corpus))]


# ---------------------------------------------------------------------------
# exit codes and reporting


def run_exit_code(run: Run) -> int:
    """CLI exit semantics: 0 clean pass, 1 fail/reject/partial branch, 3 error."""
    if run.status in (RunStatus.FAILED, RunStatus.CANCELLED):
        return 3
    if any(b in ("fail", "reject", "partial") for b in run.branches.values()):
        return 1
    return 0


def normalize_events(events: list[RunEvent]) -> list[dict]:
    """Replayable form of an event log: timestamps zeroed, nothing else."""
    out = []
    for e in events:
        doc = e.to_doc()
        doc["at_us"] = 0
        out.append(doc)
    return out


def export_report(run: Run) -> dict:
    """Machine-readable report plus rendered markdown, from log and store only.

    Identical event logs and stores yield byte-identical reports; nothing
    here reads clocks or global state.
    """
    if run.status not in TERMINAL_STATUSES:
        raise RunNotTerminal(run.status)

    summary = None
    per_step: list[dict] = []
    debug_sections: list[dict] = []
    approval = None
    rework = None

    agent_roles = {}
    for node in run.graph.nodes:
        config = node.config
        if isinstance(config, AgentNodeConfig):
            agent_roles[node.id] = (config.agent.id, config.agent.role)

    for node_id, port, obj_hash in run.published:
        obj = run.store[obj_hash]
        if port == "summary" and obj.schema == "text-blob":
            try:
                summary = json.loads(obj.payload["text"])
            except (KeyError, json.JSONDecodeError):
                summary = None
        elif obj.schema == "validation-verdict":
            per_step.append(obj.payload)
        elif obj.schema == "approval-flag":
            approval = obj.payload
        elif port == "reject" and obj.schema == "text-blob":
            rework = obj.payload.get("text")
        elif port == "reply" and node_id in agent_roles and agent_roles[node_id][1] == "debug":
            agent_id, _ = agent_roles[node_id]
            debug_sections.append(
                {"node_id": node_id, "agent_id": agent_id, "text": obj.payload.get("text", "")}
            )

    outputs = {}
    for node in run.graph.nodes:
        if node.kind is NodeKind.OUTPUT and run.node_status.get(node.id) == "done":
            received = [
                e.detail.get("received", [])
                for e in run.events
                if e.kind == "node_finished" and e.node_id == node.id
            ]
            outputs[node.id] = received[-1] if received else []

    machine = {
        "run_id": run.run_id,
        "graph": {"name": run.graph.name, "hash": graph_hash(run.graph)},
        "status": run.status.value,
        "note": run.note,
        "node_status": dict(run.node_status),
        "branches": dict(run.branches),
        "validation": (
            {
                "aggregate": summary.get("aggregate"),
                "windows_examined": summary.get("windows_examined"),
                "per_step": per_step,
            }
            if summary
            else None
        ),
        "approval": approval,
        "rework": rework,
        "debug": debug_sections,
        "outputs": outputs,
        "objects": [
            {
                "hash": h,
                "schema": run.store[h].schema,
                "node_id": node_id,
                "port": port,
                "parents": list(run.store[h].provenance.parent_hashes),
            }
            for node_id, port, h in run.published
        ],
        "event_count": len(run.events),
    }
    machine["markdown"] = _render_markdown(machine)
    return machine


def _render_markdown(machine: dict) -> str:
    lines = [
        f"# Run report: {machine['graph']['name']}",
        "",
        f"* run: `{machine['run_id']}`",
        f"* status: **{machine['status']}**"
        + (f" ({machine['note']})" if machine.get("note") else ""),
        f"* graph hash: `{machine['graph']['hash'][:12]}`",
    ]
    if machine.get("branches"):
        taken = ", ".join(f"{n} -> {b}" for n, b in sorted(machine["branches"].items()))
        lines.append(f"* branches: {taken}")
    approval = machine.get("approval")
    if approval:
        word = "approved" if approval.get("approved") else "rejected"
        lines.append(f"* approval: {word} by {approval.get('reviewer')}")
    validation = machine.get("validation")
    if validation:
        lines += [
            "",
            f"## Validation: {validation['aggregate']}",
            "",
            f"{validation['windows_examined']} windows examined.",
            "",
            "| step | status | confidence | window | explanation |",
            "| ---- | ------ | ---------- | ------ | ----------- |",
        ]
        for v in validation["per_step"]:
            lines.append(
                f"| {v['step_no']} | {v['status']} | {v['confidence']:.2f} "
                f"| [{v['window_start']}, {v['window_end']}) | {v['explanation']} |"
            )
    for section in machine.get("debug", []):
        lines += ["", f"## Debug diagnosis ({section['agent_id']})", "", section["text"]]
    if machine.get("rework"):
        lines += ["", "## Rework requested", "", "```", machine["rework"], "```"]
    if machine.get("outputs"):
        lines.append("")
        lines.append("## Outputs")
        lines.append("")
        for node_id, hashes in sorted(machine["outputs"].items()):
            lines.append(f"* `{node_id}`: {len(hashes)} object(s)")
            for h in hashes:
                lines.append(f"  * `{h}`")
    lines.append("")
    return "\n".join(lines)
