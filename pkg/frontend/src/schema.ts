/**
 * Client-side mirror of the server's graph rules.
 *
 * The canvas validates as the user edits so feedback is immediate, but the
 * server remains the authority: everything here is a rendering rule, and a
 * graph the client accepts is still validated again on save.
 */
import type { NodeConfigDoc, NodeKind, PortDoc } from "./types.js";

export const ANY_SCHEMA = "any";

export const NODE_KINDS: readonly NodeKind[] = [
  "input",
  "agent",
  "telemcp",
  "logic",
  "conditional",
  "output",
];

export const KIND_LABELS: Record<NodeKind, string> = {
  input: "Input",
  agent: "AI agent",
  telemcp: "TeleMCP",
  logic: "Logic",
  conditional: "Conditional",
  output: "Output",
};

export const KIND_HINTS: Record<NodeKind, string> = {
  input: "Raw artifact bound at run start",
  agent: "LLM call with a prompt template",
  telemcp: "Map raw artifacts to typed context objects",
  logic: "Deterministic builtin or custom script",
  conditional: "Route by approval or verdict",
  output: "Terminal sink collected into the report",
};

export const MEDIA_TYPES = [
  "text",
  "decoded-trace",
  "srsran-log",
  "pcap",
  "flow-json",
] as const;

export const TELEMCP_MAPPERS = ["decoded-trace", "srsran-log"] as const;

export const LOGIC_BUILTINS = [
  "sliding-window-validation",
  "pcap-processing",
  "keyword-retrieval",
  "custom",
] as const;

export const PREDICATES = ["human-approval", "verdict-branch"] as const;

export const AGENT_ROLES = ["gen", "val", "debug", "chat"] as const;

export const OUTPUT_SCHEMAS = [
  "text-blob",
  "procedural-flow",
  "validation-verdict",
  "message-record",
  "log-window",
  "kpi-sample",
  "approval-flag",
] as const;

/** Numeric parameter bounds per logic builtin, mirroring server BadParam rules. */
export interface ParamSpec {
  name: string;
  label: string;
  min: number;
  max?: number;
  integer: boolean;
  fallback: number;
}

export const LOGIC_PARAMS: Record<string, ParamSpec[]> = {
  "sliding-window-validation": [
    { name: "window_size", label: "Window size", min: 1, integer: true, fallback: 20 },
    { name: "stride", label: "Stride", min: 1, integer: true, fallback: 2 },
    { name: "max_windows_per_step", label: "Max windows per step", min: 1, integer: true, fallback: 3 },
    { name: "confidence_threshold", label: "Confidence threshold", min: 0, max: 1, integer: false, fallback: 0.7 },
  ],
  "keyword-retrieval": [
    { name: "top_k", label: "Top k", min: 1, integer: true, fallback: 3 },
  ],
  "pcap-processing": [],
  custom: [],
};

// ---------------------------------------------------------------------------
// default ports

function port(name: string, direction: "in" | "out", accepts: string[]): PortDoc {
  return { name, direction, accepts };
}

/**
 * Ports implied by kind and config. Must stay in lockstep with the server's
 * defaults or the client will draw connections the server refuses.
 */
export function defaultPortsForKind(
  kind: NodeKind,
  config: NodeConfigDoc,
): { inPorts: PortDoc[]; outPorts: PortDoc[] } {
  switch (kind) {
    case "input": {
      const accepts = config.media_type === "flow-json" ? ["procedural-flow"] : [ANY_SCHEMA];
      return { inPorts: [], outPorts: [port("artifact", "out", accepts)] };
    }
    case "agent": {
      const reply = config.output_schema || "text-blob";
      return {
        inPorts: [port("context", "in", [ANY_SCHEMA])],
        outPorts: [port("reply", "out", [reply])],
      };
    }
    case "telemcp":
      return {
        inPorts: [port("raw", "in", [ANY_SCHEMA])],
        outPorts: [port("objects", "out", ["message-record"])],
      };
    case "logic":
      switch (config.builtin ?? "custom") {
        case "sliding-window-validation":
          return {
            inPorts: [
              port("flow", "in", ["procedural-flow"]),
              port("trace", "in", ["message-record"]),
            ],
            outPorts: [
              port("verdicts", "out", ["validation-verdict"]),
              port("summary", "out", ["text-blob"]),
            ],
          };
        case "pcap-processing":
          return {
            inPorts: [port("decoded", "in", ["text-blob"]), port("log", "in", ["text-blob"])],
            outPorts: [port("records", "out", ["message-record"])],
          };
        case "keyword-retrieval":
          return {
            inPorts: [port("query", "in", ["text-blob"]), port("docs", "in", ["text-blob"])],
            outPorts: [port("snippets", "out", ["text-blob"])],
          };
        default:
          return {
            inPorts: [port("in", "in", [ANY_SCHEMA])],
            outPorts: [port("out", "out", [ANY_SCHEMA])],
          };
      }
    case "conditional":
      return {
        inPorts: [port("subject", "in", [ANY_SCHEMA])],
        outPorts: (config.branches ?? []).map((b) => port(b, "out", [ANY_SCHEMA])),
      };
    case "output":
      return { inPorts: [port("sink", "in", [ANY_SCHEMA])], outPorts: [] };
  }
}

export function defaultConfigForKind(kind: NodeKind): NodeConfigDoc {
  switch (kind) {
    case "input":
      return { media_type: "text" };
    case "agent":
      return {
        agent: {
          id: "agent-1",
          role: "chat",
          system_prompt: "",
          model_id: "mock-1",
          temperature: 0,
          max_tokens: 1024,
          top_p: 1,
          stop: [],
          endpoint_ref: "mock",
        },
        prompt_template: "{{text}}",
      };
    case "telemcp":
      return { mapper: "decoded-trace", selector_paths: [] };
    case "logic":
      return {
        builtin: "sliding-window-validation",
        params: Object.fromEntries(
          (LOGIC_PARAMS["sliding-window-validation"] ?? []).map((p) => [p.name, p.fallback]),
        ),
      };
    case "conditional":
      return { predicate: "human-approval", branches: ["approve", "reject"] };
    case "output":
      return {};
  }
}

// ---------------------------------------------------------------------------
// compatibility and draft validation

/** An edge is drawable when either side is "any" or the schema sets meet. */
export function portsCompatible(outAccepts: string[], inAccepts: string[]): boolean {
  if (outAccepts.includes(ANY_SCHEMA) || inAccepts.includes(ANY_SCHEMA)) return true;
  return outAccepts.some((s) => inAccepts.includes(s));
}

export interface DraftNode {
  id: string;
  kind: NodeKind;
  label: string;
  config: NodeConfigDoc;
  x: number;
  y: number;
  /** Explicit port override from a loaded document; defaults apply otherwise. */
  ports?: { in?: PortDoc[]; out?: PortDoc[] };
}

/** Effective ports of a draft node: explicit override or kind defaults. */
export function portsOf(node: DraftNode): { inPorts: PortDoc[]; outPorts: PortDoc[] } {
  const defaults = defaultPortsForKind(node.kind, node.config);
  return {
    inPorts: node.ports?.in ?? defaults.inPorts,
    outPorts: node.ports?.out ?? defaults.outPorts,
  };
}

export interface DraftEdge {
  fromNode: string;
  fromPort: string;
  toNode: string;
  toPort: string;
}

export interface Diagnostic {
  code: string;
  message: string;
  where: string;
}

function diag(code: string, message: string, where = ""): Diagnostic {
  return { code, message, where };
}

const NODE_ID_RE = /^[a-z0-9_-]+$/;

/**
 * Inline diagnostics over the draft. The codes intentionally match the
 * server's so a message seen before save reads the same as one after.
 */
export function validateDraft(nodes: DraftNode[], edges: DraftEdge[]): Diagnostic[] {
  const out: Diagnostic[] = [];
  const byId = new Map<string, DraftNode>();

  for (const node of nodes) {
    if (!NODE_ID_RE.test(node.id)) {
      out.push(diag("BadNodeId", `node id ${node.id} must match [a-z0-9_-]+`, node.id));
    }
    if (byId.has(node.id)) {
      out.push(diag("DuplicateNodeId", `duplicate node id ${node.id}`, node.id));
    }
    byId.set(node.id, node);
    out.push(...validateNodeConfig(node));
  }

  if (!nodes.some((n) => n.kind === "input")) {
    out.push(diag("NoInputNode", "graph needs at least one input node"));
  }
  if (!nodes.some((n) => n.kind === "output")) {
    out.push(diag("NoOutputNode", "graph needs at least one output node"));
  }

  for (const edge of edges) {
    const where = `${edge.fromNode}.${edge.fromPort}->${edge.toNode}.${edge.toPort}`;
    const from = byId.get(edge.fromNode);
    const to = byId.get(edge.toNode);
    if (!from || !to) {
      out.push(diag("UnknownNode", "edge endpoint does not exist", where));
      continue;
    }
    const outPort = portsOf(from).outPorts.find((p) => p.name === edge.fromPort);
    const inPort = portsOf(to).inPorts.find((p) => p.name === edge.toPort);
    if (!outPort || !inPort) {
      out.push(diag("UnknownPort", "edge names a port the node does not have", where));
      continue;
    }
    if (!portsCompatible(outPort.accepts, inPort.accepts)) {
      out.push(
        diag(
          "SchemaIncompatible",
          `${outPort.accepts.join("/")} does not feed ${inPort.accepts.join("/")}`,
          where,
        ),
      );
    }
  }

  const cycle = findCycle(nodes, edges);
  if (cycle) {
    out.push(diag("CycleDetected", `cycle through ${cycle.join(" -> ")}`));
  } else if (nodes.length > 0 && !outputReachable(nodes, edges)) {
    out.push(diag("NoReachableOutput", "no output node is reachable from an input"));
  }

  return out;
}

function validateNodeConfig(node: DraftNode): Diagnostic[] {
  const out: Diagnostic[] = [];
  const c = node.config;
  if (node.kind === "logic") {
    for (const spec of LOGIC_PARAMS[c.builtin ?? "custom"] ?? []) {
      const value = c.params?.[spec.name];
      if (value === undefined || Number.isNaN(value)) {
        out.push(diag("BadParam", `${spec.name} is required`, node.id));
        continue;
      }
      if (spec.integer && !Number.isInteger(value)) {
        out.push(diag("BadParam", `${spec.name} must be an integer`, node.id));
      }
      if (value < spec.min || (spec.max !== undefined && value > spec.max)) {
        const top = spec.max !== undefined ? ` and <= ${spec.max}` : "";
        out.push(diag("BadParam", `${spec.name} must be >= ${spec.min}${top}`, node.id));
      }
    }
    if (c.builtin === "custom" && !c.script_ref) {
      out.push(diag("BadConfig", "custom logic needs a script_ref", node.id));
    }
  }
  if (node.kind === "conditional") {
    const branches = c.branches ?? [];
    if (c.predicate === "human-approval") {
      const want = ["approve", "reject"];
      if (branches.length !== 2 || !want.every((b) => branches.includes(b))) {
        out.push(diag("BadBranch", "human-approval branches are approve and reject", node.id));
      }
    } else if (c.predicate === "verdict-branch") {
      if (!branches.includes("pass") || !branches.includes("fail")) {
        out.push(diag("BadBranch", "verdict-branch needs pass and fail", node.id));
      }
      for (const b of branches) {
        if (!["pass", "fail", "partial"].includes(b)) {
          out.push(diag("BadBranch", `unknown verdict branch ${b}`, node.id));
        }
      }
    }
  }
  if (node.kind === "agent" && !c.agent?.id) {
    out.push(diag("BadConfig", "agent node needs an agent id", node.id));
  }
  return out;
}

function findCycle(nodes: DraftNode[], edges: DraftEdge[]): string[] | null {
  const adjacency = new Map<string, string[]>(nodes.map((n) => [n.id, []]));
  for (const e of edges) {
    adjacency.get(e.fromNode)?.push(e.toNode);
  }
  const state = new Map<string, 1 | 2>(); // 1 visiting, 2 done
  const stack: string[] = [];
  let found: string[] | null = null;

  const visit = (id: string): boolean => {
    state.set(id, 1);
    stack.push(id);
    for (const next of adjacency.get(id) ?? []) {
      const s = state.get(next);
      if (s === 1) {
        found = stack.slice(stack.indexOf(next)).concat(next);
        return true;
      }
      if (s === undefined && visit(next)) return true;
    }
    stack.pop();
    state.set(id, 2);
    return false;
  };

  for (const n of nodes) {
    if (!state.has(n.id) && visit(n.id)) break;
  }
  return found;
}

function outputReachable(nodes: DraftNode[], edges: DraftEdge[]): boolean {
  const adjacency = new Map<string, string[]>(nodes.map((n) => [n.id, []]));
  for (const e of edges) adjacency.get(e.fromNode)?.push(e.toNode);
  const kinds = new Map(nodes.map((n) => [n.id, n.kind]));
  const queue = nodes.filter((n) => n.kind === "input").map((n) => n.id);
  const seen = new Set(queue);
  while (queue.length) {
    const id = queue.shift()!;
    if (kinds.get(id) === "output") return true;
    for (const next of adjacency.get(id) ?? []) {
      if (!seen.has(next)) {
        seen.add(next);
        queue.push(next);
      }
    }
  }
  return false;
}
