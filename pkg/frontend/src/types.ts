/**
 * Wire types for the telehub HTTP API.
 *
 * These mirror the JSON documents the service produces and accepts. The
 * canvas keeps its own richer editor state (see state.ts) and converts to
 * and from these shapes at the API boundary.
 */

export type NodeKind =
  | "input"
  | "agent"
  | "telemcp"
  | "logic"
  | "conditional"
  | "output";

export interface PortDoc {
  name: string;
  direction: "in" | "out";
  accepts: string[];
}

/** Agent spec as stored in graph documents. Only id is required; the
 * server fills in defaults for everything else. */
export interface AgentSpecDoc {
  id: string;
  role?: "gen" | "val" | "debug" | "chat";
  system_prompt?: string;
  model_id?: string;
  temperature?: number;
  max_tokens?: number;
  top_p?: number;
  stop?: string[];
  endpoint_ref?: string;
  [key: string]: unknown;
}

/** Per-kind config records, as stored in graph documents. Open-ended:
 * these are JSON objects and the editor mutates them in place. */
export interface NodeConfigDoc {
  media_type?: string;
  agent?: AgentSpecDoc;
  prompt_template?: string;
  output_schema?: string;
  mapper?: string;
  selector_paths?: string[];
  builtin?: string;
  params?: Record<string, number>;
  script_ref?: string;
  predicate?: string;
  branches?: string[];
  strict?: boolean;
  [key: string]: unknown;
}

export interface NodeDoc {
  id: string;
  kind: NodeKind;
  label?: string;
  config?: NodeConfigDoc;
  ports?: { in?: PortDoc[]; out?: PortDoc[] };
}

export interface EdgeDoc {
  from: string; // "node.port"
  to: string;
}

export interface GraphDoc {
  version: string;
  name: string;
  nodes: NodeDoc[];
  edges: EdgeDoc[];
  metadata?: {
    layout?: Record<string, { x: number; y: number }>;
    [key: string]: unknown;
  };
}

// ---------------------------------------------------------------------------
// runs

export interface RunEvent {
  seq: number;
  kind: string;
  at_us: number;
  node_id?: string;
  detail?: Record<string, unknown>;
}

export interface EventPage {
  events: RunEvent[];
  next_since: number;
  complete?: boolean;
}

export interface ExposedObject {
  hash: string;
  schema: string;
  payload: Record<string, unknown>;
}

export interface PendingApproval {
  node_id: string;
  exposed: string[];
  objects: ExposedObject[];
}

export interface RunStatusDoc {
  run_id: string;
  graph?: string;
  status: string;
  node_status?: Record<string, string>;
  branches?: Record<string, string>;
  event_count: number;
  note?: string;
  pending_approval?: PendingApproval;
  exit_code?: number;
}

export interface ValidationVerdict {
  status: "found" | "not_found";
  explanation: string;
  confidence: number;
  step_no: number;
  window_start: number;
  window_end: number;
}

export interface ReportDoc {
  run_id: string;
  graph: { name: string; hash: string };
  status: string;
  note: string | null;
  node_status: Record<string, string>;
  branches: Record<string, string>;
  validation: {
    aggregate: string;
    windows_examined: number;
    per_step: ValidationVerdict[];
  } | null;
  approval: Record<string, unknown> | null;
  rework: string | null;
  debug: { node_id: string; agent_id: string; text: string }[];
  outputs: Record<string, string[]>;
  objects: { hash: string; schema: string; node_id: string; port: string; parents: string[] }[];
  event_count: number;
  markdown: string;
}

/** One input binding for POST /runs. Exactly one field must be set. */
export interface BindingDoc {
  text?: string;
  base64?: string;
  path?: string;
}

// ---------------------------------------------------------------------------
// catalog, chat, registry

export interface PrebuiltEntry {
  id: string;
  title: string;
  description: string;
  inputs: string[];
  variants: string[];
}

export interface InstantiateResponse {
  graph: string;
  created: boolean;
  bindings: Record<string, BindingDoc>;
  variants: Record<string, Record<string, BindingDoc>>;
}

export interface ChatTurn {
  role: "user" | "assistant";
  content: string;
}

export interface ChatResponse {
  agent_id: string;
  content: string;
  prompt_tokens: number;
  completion_tokens: number;
  latency_ms: number;
}

export interface SchemaDocument {
  id: string;
  schema_version: string;
  schemas: Record<string, Record<string, { kind: string; required: boolean }>>;
}

export interface SchemaRegistryDoc {
  registry: string;
  document: SchemaDocument;
}

/** Error envelope: every 4xx/5xx body is {"error": {code, message, ...}}. */
export interface ApiErrorBody {
  error: {
    code: string;
    message: string;
    diagnostics?: { code: string; message: string; where: string }[];
    [key: string]: unknown;
  };
}
