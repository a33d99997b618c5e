/**
 * Editor state for the canvas: the draft graph, selection and dirtiness.
 *
 * The draft serializes to a plain graph document (layout under
 * metadata.layout, ignored by the engine) and loads one back losslessly,
 * explicit port overrides included. Save is gated on the draft having no
 * client diagnostics, so anything we POST should also pass the server.
 */
import {
  defaultConfigForKind,
  portsCompatible,
  portsOf,
  validateDraft,
  type Diagnostic,
  type DraftEdge,
  type DraftNode,
} from "./schema.js";
import type { GraphDoc, NodeConfigDoc, NodeKind } from "./types.js";

export type StateListener = () => void;

export interface ConnectResult {
  ok: boolean;
  reason?: string;
}

const GRAPH_DOC_VERSION = "1.0";

export class CanvasState {
  name = "untitled";
  nodes: DraftNode[] = [];
  edges: DraftEdge[] = [];
  selection: string | null = null;
  dirty = false;

  private listeners: StateListener[] = [];
  private counter = 0;

  subscribe(listener: StateListener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  private touch(): void {
    this.dirty = true;
    this.notify();
  }

  node(id: string): DraftNode | undefined {
    return this.nodes.find((n) => n.id === id);
  }

  setName(name: string): void {
    const trimmed = name.trim();
    if (!trimmed || trimmed === this.name) return;
    this.name = trimmed;
    this.touch();
  }

  /** Called after a successful save; the draft and server now agree. */
  markSaved(): void {
    this.dirty = false;
    this.notify();
  }

  // -- editing ---------------------------------------------------------------

  freshId(kind: NodeKind): string {
    let id;
    do {
      this.counter += 1;
      id = `${kind}_${this.counter}`;
    } while (this.node(id));
    return id;
  }

  addNode(kind: NodeKind, x: number, y: number): DraftNode {
    const node: DraftNode = {
      id: this.freshId(kind),
      kind,
      label: kind,
      config: defaultConfigForKind(kind),
      x: Math.round(x),
      y: Math.round(y),
    };
    this.nodes.push(node);
    this.selection = node.id;
    this.touch();
    return node;
  }

  moveNode(id: string, x: number, y: number): void {
    const node = this.node(id);
    if (!node) return;
    node.x = Math.round(x);
    node.y = Math.round(y);
    this.touch();
  }

  removeNode(id: string): void {
    this.nodes = this.nodes.filter((n) => n.id !== id);
    this.edges = this.edges.filter((e) => e.fromNode !== id && e.toNode !== id);
    if (this.selection === id) this.selection = null;
    this.touch();
  }

  updateConfig(id: string, mutate: (config: NodeConfigDoc) => void): void {
    const node = this.node(id);
    if (!node) return;
    mutate(node.config);
    // A config change can change the implied ports; drop edges that no
    // longer resolve rather than leaving phantom wires.
    this.edges = this.edges.filter((e) => {
      const from = this.node(e.fromNode);
      const to = this.node(e.toNode);
      if (!from || !to) return false;
      return (
        portsOf(from).outPorts.some((p) => p.name === e.fromPort) &&
        portsOf(to).inPorts.some((p) => p.name === e.toPort)
      );
    });
    this.touch();
  }

  setLabel(id: string, label: string): void {
    const node = this.node(id);
    if (!node) return;
    node.label = label;
    this.touch();
  }

  select(id: string | null): void {
    this.selection = id;
    this.notify();
  }

  /**
   * Wire an out port to an in port. Refusals mirror the server's rules and
   * return a human-readable reason for inline feedback.
   */
  connect(fromNode: string, fromPort: string, toNode: string, toPort: string): ConnectResult {
    const from = this.node(fromNode);
    const to = this.node(toNode);
    if (!from || !to) return { ok: false, reason: "edge endpoint does not exist" };
    if (fromNode === toNode) return { ok: false, reason: "a node cannot feed itself" };
    const outPort = portsOf(from).outPorts.find((p) => p.name === fromPort);
    const inPort = portsOf(to).inPorts.find((p) => p.name === toPort);
    if (!outPort || !inPort) return { ok: false, reason: "no such port" };
    if (!portsCompatible(outPort.accepts, inPort.accepts)) {
      return {
        ok: false,
        reason: `schema mismatch: ${outPort.accepts.join("/")} cannot feed ${inPort.accepts.join("/")}`,
      };
    }
    const exists = this.edges.some(
      (e) =>
        e.fromNode === fromNode &&
        e.fromPort === fromPort &&
        e.toNode === toNode &&
        e.toPort === toPort,
    );
    if (exists) return { ok: false, reason: "edge already exists" };
    this.edges.push({ fromNode, fromPort, toNode, toPort });
    const cycle = validateDraft(this.nodes, this.edges).find((d) => d.code === "CycleDetected");
    if (cycle) {
      this.edges.pop();
      return { ok: false, reason: "connection would create a cycle" };
    }
    this.touch();
    return { ok: true };
  }

  removeEdge(edge: DraftEdge): void {
    this.edges = this.edges.filter(
      (e) =>
        !(
          e.fromNode === edge.fromNode &&
          e.fromPort === edge.fromPort &&
          e.toNode === edge.toNode &&
          e.toPort === edge.toPort
        ),
    );
    this.touch();
  }

  // -- validation and persistence ---------------------------------------------

  diagnostics(): Diagnostic[] {
    return validateDraft(this.nodes, this.edges);
  }

  saveEnabled(): boolean {
    return this.dirty && this.nodes.length > 0 && this.diagnostics().length === 0;
  }

  toDocument(): GraphDoc {
    const layout: Record<string, { x: number; y: number }> = {};
    for (const n of this.nodes) layout[n.id] = { x: n.x, y: n.y };
    return {
      version: GRAPH_DOC_VERSION,
      name: this.name,
      nodes: this.nodes.map((n) => {
        const doc: GraphDoc["nodes"][number] = {
          id: n.id,
          kind: n.kind,
          label: n.label,
          config: JSON.parse(JSON.stringify(n.config)),
        };
        if (n.ports) doc.ports = n.ports;
        return doc;
      }),
      edges: this.edges.map((e) => ({
        from: `${e.fromNode}.${e.fromPort}`,
        to: `${e.toNode}.${e.toPort}`,
      })),
      metadata: { layout },
    };
  }

  loadDocument(doc: GraphDoc): void {
    const layout = doc.metadata?.layout ?? {};
    this.name = doc.name;
    this.nodes = doc.nodes.map((n, index) => ({
      id: n.id,
      kind: n.kind,
      label: n.label ?? n.id,
      config: JSON.parse(JSON.stringify(n.config ?? {})),
      x: layout[n.id]?.x ?? 60 + (index % 4) * 220,
      y: layout[n.id]?.y ?? 60 + Math.floor(index / 4) * 140,
      ...(n.ports ? { ports: n.ports } : {}),
    }));
    this.edges = doc.edges.map((e) => {
      const [fromNode = "", fromPort = ""] = splitRef(e.from);
      const [toNode = "", toPort = ""] = splitRef(e.to);
      return { fromNode, fromPort, toNode, toPort };
    });
    this.selection = null;
    this.dirty = false;
    this.notify();
  }

  clear(): void {
    this.name = "untitled";
    this.nodes = [];
    this.edges = [];
    this.selection = null;
    this.dirty = false;
    this.notify();
  }
}

function splitRef(ref: string): [string, string] {
  const dot = ref.indexOf(".");
  return dot < 0 ? [ref, ""] : [ref.slice(0, dot), ref.slice(dot + 1)];
}
