"""Workflow graphs: the declarative canvas model the engine executes.

A graph is a DAG of typed nodes. Six kinds cover the vocabulary: input
(binds an external artifact), agent (LLM call), telemcp (raw artifact to
typed objects), logic (built-in or registered procedure), conditional
(branching), output (terminal sink). Edges connect named ports; each port
declares which object schemas it accepts, and edge compatibility is checked
statically so a run cannot wire a text blob into a port expecting verdicts.

Documents are plain JSON (version "1.0") so canvases can be stored, diffed
and shipped. Parsing reports positional errors ("nodes[3].kind: ..."),
validation returns the full diagnostic list rather than stopping at the
first problem.
"""

from __future__ import annotations

import heapq
import json
import re
from dataclasses import dataclass, field
from enum import Enum

from .agents import AgentSpec
from .context import SCHEMAS, canonical_json_bytes, compute_hash

GRAPH_DOC_VERSION = "1.0"

NODE_ID_RE = re.compile(r"^[a-z0-9_-]+$")

ANY_SCHEMA = "any"

LOGIC_BUILTINS = (
    "sliding-window-validation",
    "pcap-processing",
    "keyword-retrieval",
    "custom",
)

MEDIA_TYPES = ("text", "decoded-trace", "srsran-log", "pcap", "flow-json")

TELEMCP_MAPPERS = ("decoded-trace", "srsran-log")

PREDICATES = ("human-approval", "verdict-branch")

AGENT_ROLES = ("gen", "val", "debug", "chat")


class NodeKind(str, Enum):
    INPUT = "input"
    AGENT = "agent"
    TELEMCP = "telemcp"
    LOGIC = "logic"
    CONDITIONAL = "conditional"
    OUTPUT = "output"


class GraphError(Exception):
    pass


class GraphDocumentError(GraphError):
    """Parse failure; carries every positional error found."""

    def __init__(self, errors: list[Diagnostic]):
        super().__init__("; ".join(str(e) for e in errors[:4]))
        self.errors = errors


class NotADag(GraphError):
    pass


@dataclass(frozen=True)
class Diagnostic:
    """One validation or parse finding. `where` is a node id, edge or doc path."""

    code: str
    message: str
    where: str = ""

    def __str__(self) -> str:
        loc = f" at {self.where}" if self.where else ""
        return f"{self.code}{loc}: {self.message}"


# ---------------------------------------------------------------------------
# node configuration


@dataclass(frozen=True)
class InputConfig:
    # media_type decides what the bound artifact becomes at run start:
    # text-ish media publish a text-blob, flow-json parses to procedural-flow,
    # pcap publishes base64 text (binary cannot ride a text-blob raw).
    media_type: str = "text"


@dataclass(frozen=True)
class AgentNodeConfig:
    agent: AgentSpec
    prompt_template: str = ""
    # When set, the reply text is parsed as JSON and published under this
    # schema instead of text-blob; the reply port type follows suit.
    output_schema: str | None = None


@dataclass(frozen=True)
class TeleMcpConfig:
    mapper: str
    selector_paths: tuple[str, ...] = ()
    invert_direction: bool = False


@dataclass(frozen=True)
class LogicConfig:
    builtin: str
    params: dict = field(default_factory=dict)
    script_ref: str | None = None
    agent: AgentSpec | None = None
    prompt_template: str = ""
    selector_paths: tuple[str, ...] = ()


@dataclass(frozen=True)
class ConditionalConfig:
    predicate: str
    branches: tuple[str, ...]
    # strict=True turns a taken-but-unconfigured branch into a run failure;
    # default is lenient (the run ends with a terminal note instead).
    strict: bool = False


@dataclass(frozen=True)
class OutputConfig:
    pass


@dataclass(frozen=True)
class Port:
    name: str
    direction: str  # "in" | "out"
    accepts: tuple[str, ...]  # schema ids, or ("any",)

    def accepts_schema(self, schema: str) -> bool:
        return ANY_SCHEMA in self.accepts or schema in self.accepts


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: NodeKind
    label: str
    config: object
    in_ports: tuple[Port, ...]
    out_ports: tuple[Port, ...]

    def in_port(self, name: str) -> Port | None:
        return next((p for p in self.in_ports if p.name == name), None)

    def out_port(self, name: str) -> Port | None:
        return next((p for p in self.out_ports if p.name == name), None)


@dataclass(frozen=True)
class Edge:
    from_node: str
    from_port: str
    to_node: str
    to_port: str

    def __str__(self) -> str:
        return f"{self.from_node}.{self.from_port}->{self.to_node}.{self.to_port}"


@dataclass
class WorkflowGraph:
    name: str
    nodes: list[NodeSpec]
    edges: list[Edge]
    metadata: dict = field(default_factory=dict)

    def node(self, node_id: str) -> NodeSpec | None:
        return next((n for n in self.nodes if n.id == node_id), None)

    def in_edges(self, node_id: str) -> list[Edge]:
        return [e for e in self.edges if e.to_node == node_id]

    def out_edges(self, node_id: str) -> list[Edge]:
        return [e for e in self.edges if e.from_node == node_id]


# ---------------------------------------------------------------------------
# default ports


def default_ports_for_kind(kind: NodeKind, config: object) -> tuple[tuple[Port, ...], tuple[Port, ...]]:
    """(in_ports, out_ports) implied by a node's kind and configuration."""
    if kind is NodeKind.INPUT:
        out_schema: tuple[str, ...] = (ANY_SCHEMA,)
        if isinstance(config, InputConfig) and config.media_type == "flow-json":
            out_schema = ("procedural-flow",)
        return (), (Port("artifact", "out", out_schema),)
    if kind is NodeKind.AGENT:
        reply_schema = "text-blob"
        if isinstance(config, AgentNodeConfig) and config.output_schema:
            reply_schema = config.output_schema
        return (Port("context", "in", (ANY_SCHEMA,)),), (Port("reply", "out", (reply_schema,)),)
    if kind is NodeKind.TELEMCP:
        return (Port("raw", "in", (ANY_SCHEMA,)),), (Port("objects", "out", ("message-record",)),)
    if kind is NodeKind.LOGIC:
        builtin = config.builtin if isinstance(config, LogicConfig) else "custom"
        if builtin == "sliding-window-validation":
            return (
                (Port("flow", "in", ("procedural-flow",)), Port("trace", "in", ("message-record",))),
                (Port("verdicts", "out", ("validation-verdict",)), Port("summary", "out", ("text-blob",))),
            )
        if builtin == "pcap-processing":
            return (
                (Port("decoded", "in", ("text-blob",)), Port("log", "in", ("text-blob",))),
                (Port("records", "out", ("message-record",)),),
            )
        if builtin == "keyword-retrieval":
            return (
                (Port("query", "in", ("text-blob",)), Port("docs", "in", ("text-blob",))),
                (Port("snippets", "out", ("text-blob",)),),
            )
        return (Port("in", "in", (ANY_SCHEMA,)),), (Port("out", "out", (ANY_SCHEMA,)),)
    if kind is NodeKind.CONDITIONAL:
        branches = config.branches if isinstance(config, ConditionalConfig) else ()
        return (
            (Port("subject", "in", (ANY_SCHEMA,)),),
            tuple(Port(b, "out", (ANY_SCHEMA,)) for b in branches),
        )
    if kind is NodeKind.OUTPUT:
        return (Port("sink", "in", (ANY_SCHEMA,)),), ()
    raise GraphError(f"unhandled node kind {kind}")


# ---------------------------------------------------------------------------
# document parsing


def _parse_config(kind: NodeKind, raw: dict, where: str, errors: list[Diagnostic]):
    def bad(msg: str, sub: str = "config") -> None:
        errors.append(Diagnostic("BadConfig", msg, f"{where}.{sub}"))

    if kind is NodeKind.INPUT:
        media = raw.get("media_type", "text")
        if media not in MEDIA_TYPES:
            bad(f"unknown media_type {media!r}", "config.media_type")
            return None
        return InputConfig(media_type=media)

    if kind is NodeKind.AGENT:
        agent_doc = raw.get("agent")
        if not isinstance(agent_doc, dict) or "id" not in agent_doc:
            bad("agent spec with an id is required", "config.agent")
            return None
        try:
            spec = AgentSpec.from_doc(agent_doc)
        except (TypeError, ValueError) as exc:
            bad(f"malformed agent spec: {exc}", "config.agent")
            return None
        output_schema = raw.get("output_schema")
        if output_schema is not None and output_schema not in SCHEMAS:
            bad(f"unknown output_schema {output_schema!r}", "config.output_schema")
            return None
        return AgentNodeConfig(
            agent=spec,
            prompt_template=raw.get("prompt_template", ""),
            output_schema=output_schema,
        )

    if kind is NodeKind.TELEMCP:
        mapper = raw.get("mapper")
        if mapper not in TELEMCP_MAPPERS:
            bad(f"mapper must be one of {list(TELEMCP_MAPPERS)}", "config.mapper")
            return None
        return TeleMcpConfig(
            mapper=mapper,
            selector_paths=tuple(raw.get("selector_paths", ())),
            invert_direction=bool(raw.get("invert_direction", False)),
        )

    if kind is NodeKind.LOGIC:
        builtin = raw.get("builtin")
        if builtin not in LOGIC_BUILTINS:
            bad(f"builtin must be one of {list(LOGIC_BUILTINS)}", "config.builtin")
            return None
        agent = None
        if isinstance(raw.get("agent"), dict):
            try:
                agent = AgentSpec.from_doc(raw["agent"])
            except (TypeError, ValueError) as exc:
                bad(f"malformed agent spec: {exc}", "config.agent")
                return None
        return LogicConfig(
            builtin=builtin,
            params=dict(raw.get("params", {})),
            script_ref=raw.get("script_ref"),
            agent=agent,
            prompt_template=raw.get("prompt_template", ""),
            selector_paths=tuple(raw.get("selector_paths", ())),
        )

    if kind is NodeKind.CONDITIONAL:
        predicate = raw.get("predicate")
        if predicate not in PREDICATES:
            bad(f"predicate must be one of {list(PREDICATES)}", "config.predicate")
            return None
        branches = tuple(raw.get("branches", ()))
        return ConditionalConfig(
            predicate=predicate, branches=branches, strict=bool(raw.get("strict", False))
        )

    if kind is NodeKind.OUTPUT:
        return OutputConfig()

    return None


def _parse_ports(raw_ports, where: str, errors: list[Diagnostic]) -> tuple[Port, ...] | None:
    ports = []
    for i, p in enumerate(raw_ports):
        if not isinstance(p, dict) or "name" not in p or "direction" not in p:
            errors.append(Diagnostic("BadPort", "port needs name and direction", f"{where}[{i}]"))
            return None
        accepts = tuple(p.get("accepts", (ANY_SCHEMA,)))
        for schema in accepts:
            if schema != ANY_SCHEMA and schema not in SCHEMAS:
                errors.append(
                    Diagnostic("BadPort", f"unknown schema {schema!r}", f"{where}[{i}].accepts")
                )
        ports.append(Port(p["name"], p["direction"], accepts))
    return tuple(ports)


def parse_graph_document(text: str | bytes | dict) -> WorkflowGraph:
    """Parse a JSON canvas document. Raises GraphDocumentError with every
    positional error found; a parsed graph is structurally sound but not yet
    validated (see validate_graph)."""
    errors: list[Diagnostic] = []
    if isinstance(text, dict):
        doc = text
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise GraphDocumentError(
                [Diagnostic("SyntaxError", exc.msg, f"line {exc.lineno} col {exc.colno}")]
            ) from exc
    if not isinstance(doc, dict):
        raise GraphDocumentError([Diagnostic("SyntaxError", "document must be a JSON object")])

    if doc.get("version") != GRAPH_DOC_VERSION:
        errors.append(
            Diagnostic("BadVersion", f"document version must be {GRAPH_DOC_VERSION!r}", "version")
        )
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        errors.append(Diagnostic("BadName", "graph name must be a non-empty string", "name"))
        name = ""

    nodes: list[NodeSpec] = []
    seen_ids: set[str] = set()
    raw_nodes = doc.get("nodes")
    if not isinstance(raw_nodes, list):
        errors.append(Diagnostic("BadNodes", "nodes must be a list", "nodes"))
        raw_nodes = []
    for i, raw in enumerate(raw_nodes):
        where = f"nodes[{i}]"
        if not isinstance(raw, dict):
            errors.append(Diagnostic("BadNode", "node must be an object", where))
            continue
        node_id = raw.get("id", "")
        if not isinstance(node_id, str) or not NODE_ID_RE.match(node_id):
            errors.append(
                Diagnostic("BadNodeId", f"id {node_id!r} must match [a-z0-9_-]+", f"{where}.id")
            )
            continue
        if node_id in seen_ids:
            errors.append(Diagnostic("DuplicateNodeId", f"duplicate id {node_id!r}", f"{where}.id"))
            continue
        seen_ids.add(node_id)
        try:
            kind = NodeKind(raw.get("kind"))
        except ValueError:
            errors.append(
                Diagnostic("UnknownKind", f"unknown kind {raw.get('kind')!r}", f"{where}.kind")
            )
            continue
        config = _parse_config(kind, raw.get("config", {}) or {}, where, errors)
        if config is None:
            continue
        in_ports, out_ports = default_ports_for_kind(kind, config)
        raw_ports = raw.get("ports")
        if isinstance(raw_ports, dict):
            if "in" in raw_ports:
                parsed = _parse_ports(raw_ports["in"], f"{where}.ports.in", errors)
                if parsed is None:
                    continue
                in_ports = parsed
            if "out" in raw_ports:
                parsed = _parse_ports(raw_ports["out"], f"{where}.ports.out", errors)
                if parsed is None:
                    continue
                out_ports = parsed
        nodes.append(
            NodeSpec(
                id=node_id,
                kind=kind,
                label=raw.get("label", node_id),
                config=config,
                in_ports=in_ports,
                out_ports=out_ports,
            )
        )

    edges: list[Edge] = []
    raw_edges = doc.get("edges")
    if not isinstance(raw_edges, list):
        errors.append(Diagnostic("BadEdges", "edges must be a list", "edges"))
        raw_edges = []
    for i, raw in enumerate(raw_edges):
        where = f"edges[{i}]"
        if not isinstance(raw, dict) or "from" not in raw or "to" not in raw:
            errors.append(Diagnostic("BadEdge", "edge needs from and to", where))
            continue
        endpoints = []
        ok = True
        for side in ("from", "to"):
            ref = raw[side]
            if not isinstance(ref, str) or ref.count(".") != 1:
                errors.append(
                    Diagnostic("BadEdge", f"{side} must be 'nodeId.portName'", f"{where}.{side}")
                )
                ok = False
                break
            endpoints.append(ref.split(".", 1))
        if ok:
            (fn, fp), (tn, tp) = endpoints
            edges.append(Edge(from_node=fn, from_port=fp, to_node=tn, to_port=tp))

    metadata = doc.get("metadata", {})
    if not isinstance(metadata, dict):
        errors.append(Diagnostic("BadMetadata", "metadata must be an object", "metadata"))
        metadata = {}

    if errors:
        raise GraphDocumentError(errors)
    return WorkflowGraph(name=name, nodes=nodes, edges=edges, metadata=metadata)


def graph_to_document(graph: WorkflowGraph) -> dict:
    """Serialize back to the JSON document form. parse(serialize(g)) == g."""
    nodes = []
    for n in graph.nodes:
        raw: dict = {"id": n.id, "kind": n.kind.value, "label": n.label}
        c = n.config
        if isinstance(c, InputConfig):
            raw["config"] = {"media_type": c.media_type}
        elif isinstance(c, AgentNodeConfig):
            cfg: dict = {"agent": c.agent.to_doc(), "prompt_template": c.prompt_template}
            if c.output_schema:
                cfg["output_schema"] = c.output_schema
            raw["config"] = cfg
        elif isinstance(c, TeleMcpConfig):
            raw["config"] = {
                "mapper": c.mapper,
                "selector_paths": list(c.selector_paths),
                "invert_direction": c.invert_direction,
            }
        elif isinstance(c, LogicConfig):
            cfg = {"builtin": c.builtin, "params": dict(c.params)}
            if c.script_ref:
                cfg["script_ref"] = c.script_ref
            if c.agent:
                cfg["agent"] = c.agent.to_doc()
            if c.prompt_template:
                cfg["prompt_template"] = c.prompt_template
            if c.selector_paths:
                cfg["selector_paths"] = list(c.selector_paths)
            raw["config"] = cfg
        elif isinstance(c, ConditionalConfig):
            cfg = {"predicate": c.predicate, "branches": list(c.branches)}
            if c.strict:
                cfg["strict"] = True
            raw["config"] = cfg
        else:
            raw["config"] = {}
        default_in, default_out = default_ports_for_kind(n.kind, c)
        if n.in_ports != default_in or n.out_ports != default_out:
            raw["ports"] = {
                "in": [{"name": p.name, "direction": "in", "accepts": list(p.accepts)} for p in n.in_ports],
                "out": [{"name": p.name, "direction": "out", "accepts": list(p.accepts)} for p in n.out_ports],
            }
        nodes.append(raw)
    return {
        "version": GRAPH_DOC_VERSION,
        "name": graph.name,
        "nodes": nodes,
        "edges": [
            {"from": f"{e.from_node}.{e.from_port}", "to": f"{e.to_node}.{e.to_port}"}
            for e in graph.edges
        ],
        "metadata": dict(graph.metadata),
    }


def graph_hash(graph: WorkflowGraph) -> str:
    """Content hash of the canonical document; stable across round-trips."""
    return compute_hash(canonical_json_bytes(graph_to_document(graph)))


# ---------------------------------------------------------------------------
# validation


def _validate_logic_params(node: NodeSpec, config: LogicConfig, diags: list[Diagnostic]) -> None:
    params = config.params
    if config.builtin == "sliding-window-validation":
        window = params.get("window_size", 20)
        stride = params.get("stride", 10)
        if not isinstance(window, int) or window < 1:
            diags.append(Diagnostic("BadParam", "window_size must be an integer >= 1", node.id))
        if not isinstance(stride, int) or stride < 1:
            diags.append(Diagnostic("BadParam", "stride must be an integer >= 1", node.id))
        max_windows = params.get("max_windows_per_step")
        if max_windows is not None and (not isinstance(max_windows, int) or max_windows < 1):
            diags.append(
                Diagnostic("BadParam", "max_windows_per_step must be an integer >= 1", node.id)
            )
        threshold = params.get("confidence_threshold", 0.7)
        if not isinstance(threshold, (int, float)) or isinstance(threshold, bool) or not (
            0 <= threshold <= 1
        ):
            diags.append(
                Diagnostic("BadParam", "confidence_threshold must be in [0, 1]", node.id)
            )
        if config.agent is None:
            diags.append(
                Diagnostic("BadConfig", "sliding-window-validation needs an agent", node.id)
            )
    elif config.builtin == "keyword-retrieval":
        top_k = params.get("top_k", 5)
        if not isinstance(top_k, int) or top_k < 1:
            diags.append(Diagnostic("BadParam", "top_k must be an integer >= 1", node.id))
    elif config.builtin == "custom":
        if not config.script_ref:
            diags.append(Diagnostic("BadConfig", "custom logic needs a script_ref", node.id))


def validate_graph(graph: WorkflowGraph) -> list[Diagnostic]:
    """All structural diagnostics for a parsed graph. Empty list means runnable."""
    diags: list[Diagnostic] = []
    by_id = {n.id: n for n in graph.nodes}

    inputs = [n for n in graph.nodes if n.kind is NodeKind.INPUT]
    outputs = [n for n in graph.nodes if n.kind is NodeKind.OUTPUT]
    if not inputs:
        diags.append(Diagnostic("NoInputNode", "graph needs at least one input node"))
    if not outputs:
        diags.append(Diagnostic("NoOutputNode", "graph needs at least one output node"))

    for node in graph.nodes:
        if node.kind is NodeKind.CONDITIONAL and isinstance(node.config, ConditionalConfig):
            cfg = node.config
            port_names = {p.name for p in node.out_ports}
            for branch in cfg.branches:
                if branch not in port_names:
                    diags.append(
                        Diagnostic("BadBranch", f"branch {branch!r} has no out-port", node.id)
                    )
            if cfg.predicate == "human-approval" and set(cfg.branches) != {"approve", "reject"}:
                diags.append(
                    Diagnostic(
                        "BadBranch",
                        "human-approval branches must be exactly approve and reject",
                        node.id,
                    )
                )
            if cfg.predicate == "verdict-branch":
                allowed = {"pass", "fail", "partial"}
                if not set(cfg.branches) <= allowed or not {"pass", "fail"} <= set(cfg.branches):
                    diags.append(
                        Diagnostic(
                            "BadBranch",
                            "verdict-branch branches must include pass and fail and may add partial",
                            node.id,
                        )
                    )
        if node.kind is NodeKind.LOGIC and isinstance(node.config, LogicConfig):
            _validate_logic_params(node, node.config, diags)

    for edge in graph.edges:
        src = by_id.get(edge.from_node)
        dst = by_id.get(edge.to_node)
        if src is None:
            diags.append(Diagnostic("UnknownNode", f"unknown node {edge.from_node!r}", str(edge)))
            continue
        if dst is None:
            diags.append(Diagnostic("UnknownNode", f"unknown node {edge.to_node!r}", str(edge)))
            continue
        out_port = src.out_port(edge.from_port)
        in_port = dst.in_port(edge.to_port)
        if out_port is None:
            diags.append(
                Diagnostic("UnknownPort", f"{edge.from_node} has no out-port {edge.from_port!r}", str(edge))
            )
            continue
        if in_port is None:
            diags.append(
                Diagnostic("UnknownPort", f"{edge.to_node} has no in-port {edge.to_port!r}", str(edge))
            )
            continue
        if ANY_SCHEMA not in out_port.accepts and ANY_SCHEMA not in in_port.accepts:
            if not set(out_port.accepts) & set(in_port.accepts):
                diags.append(
                    Diagnostic(
                        "SchemaIncompatible",
                        f"out-port carries {sorted(out_port.accepts)}, "
                        f"in-port accepts {sorted(in_port.accepts)}",
                        str(edge),
                    )
                )

    # Cycle check; also catches self-loops.
    try:
        order = topo_order(graph)
    except NotADag as exc:
        diags.append(Diagnostic("CycleDetected", str(exc)))
        order = []

    if order and inputs and outputs:
        reachable: set[str] = {n.id for n in inputs}
        for node_id in order:
            if node_id in reachable:
                for e in graph.out_edges(node_id):
                    reachable.add(e.to_node)
        if not any(o.id in reachable for o in outputs):
            diags.append(
                Diagnostic("NoReachableOutput", "no output node is reachable from an input")
            )

    return diags


def topo_order(graph: WorkflowGraph) -> list[str]:
    """Deterministic topological order; ties break by node id ascending."""
    indegree = {n.id: 0 for n in graph.nodes}
    successors: dict[str, list[str]] = {n.id: [] for n in graph.nodes}
    for e in graph.edges:
        if e.from_node in indegree and e.to_node in indegree:
            indegree[e.to_node] += 1
            successors[e.from_node].append(e.to_node)
    heap = [node_id for node_id, d in indegree.items() if d == 0]
    heapq.heapify(heap)
    order: list[str] = []
    while heap:
        node_id = heapq.heappop(heap)
        order.append(node_id)
        for succ in successors[node_id]:
            indegree[succ] -= 1
            if indegree[succ] == 0:
                heapq.heappush(heap, succ)
    if len(order) != len(graph.nodes):
        stuck = sorted(node_id for node_id, d in indegree.items() if d > 0)
        raise NotADag(f"cycle through {', '.join(stuck)}")
    return order
