/**
 * SVG node canvas.
 *
 * Rendering is immediate-mode: every state change redraws the whole SVG.
 * At desk scale (tens of nodes) this is simpler and plenty fast, and it
 * keeps the DOM a pure function of CanvasState.
 *
 * Interactions:
 *   - drag a node body to move it
 *   - mousedown on an out port, release on an in port to draw an edge
 *   - click a node to select, click empty canvas to deselect
 *   - click an edge to delete it
 *   - drop a palette kind (HTML5 dnd) or click a palette entry to add
 */
import { portsOf, type DraftEdge, type DraftNode } from "./schema.js";
import type { CanvasState } from "./state.js";

const SVG_NS = "http://www.w3.org/2000/svg";

export const NODE_WIDTH = 168;
export const NODE_HEADER = 26;
export const PORT_SPACING = 20;
export const PORT_RADIUS = 5;

export function nodeHeight(node: DraftNode): number {
  const ports = portsOf(node);
  const rows = Math.max(ports.inPorts.length, ports.outPorts.length, 1);
  return NODE_HEADER + rows * PORT_SPACING + 8;
}

export function portPosition(
  node: DraftNode,
  portName: string,
  direction: "in" | "out",
): { x: number; y: number } {
  const ports = portsOf(node);
  const list = direction === "in" ? ports.inPorts : ports.outPorts;
  const index = Math.max(
    list.findIndex((p) => p.name === portName),
    0,
  );
  return {
    x: direction === "in" ? node.x : node.x + NODE_WIDTH,
    y: node.y + NODE_HEADER + PORT_SPACING * index + PORT_SPACING / 2,
  };
}

interface PendingWire {
  fromNode: string;
  fromPort: string;
  x: number;
  y: number;
}

export class NodeCanvas {
  readonly svg: SVGSVGElement;
  private state: CanvasState;
  private onRefusal: (reason: string) => void;
  private dragging: { id: string; dx: number; dy: number } | null = null;
  private wire: PendingWire | null = null;
  private badges: Record<string, string> = {};

  constructor(state: CanvasState, onRefusal: (reason: string) => void) {
    this.state = state;
    this.onRefusal = onRefusal;
    this.svg = document.createElementNS(SVG_NS, "svg");
    this.svg.classList.add("canvas");
    this.svg.setAttribute("tabindex", "0");

    this.svg.addEventListener("mousedown", (e) => this.onMouseDown(e));
    this.svg.addEventListener("mousemove", (e) => this.onMouseMove(e));
    this.svg.addEventListener("mouseup", (e) => this.onMouseUp(e));
    this.svg.addEventListener("dragover", (e) => e.preventDefault());
    this.svg.addEventListener("drop", (e) => this.onDrop(e));

    state.subscribe(() => this.render());
    this.render();
  }

  /** Per-node status badges (run monitoring); empty map clears them. */
  setBadges(badges: Record<string, string>): void {
    this.badges = badges;
    this.render();
  }

  private canvasPoint(e: MouseEvent): { x: number; y: number } {
    const rect = this.svg.getBoundingClientRect();
    return { x: e.clientX - rect.left, y: e.clientY - rect.top };
  }

  private onDrop(e: DragEvent): void {
    e.preventDefault();
    const kind = e.dataTransfer?.getData("application/x-node-kind");
    if (!kind) return;
    const p = this.canvasPoint(e);
    this.state.addNode(kind as DraftNode["kind"], p.x, p.y);
  }

  private onMouseDown(e: MouseEvent): void {
    const target = e.target as Element;
    const portEl = target.closest("[data-port]");
    if (portEl) {
      const nodeId = portEl.getAttribute("data-node")!;
      const portName = portEl.getAttribute("data-port")!;
      if (portEl.getAttribute("data-direction") === "out") {
        const p = this.canvasPoint(e);
        this.wire = { fromNode: nodeId, fromPort: portName, x: p.x, y: p.y };
        this.render();
      }
      e.preventDefault();
      return;
    }
    const nodeEl = target.closest("[data-node-id]");
    if (nodeEl) {
      const id = nodeEl.getAttribute("data-node-id")!;
      const node = this.state.node(id);
      if (node) {
        const p = this.canvasPoint(e);
        this.dragging = { id, dx: p.x - node.x, dy: p.y - node.y };
        this.state.select(id);
      }
      return;
    }
    const edgeEl = target.closest("[data-edge]");
    if (edgeEl) {
      const [fromNode = "", fromPort = "", toNode = "", toPort = ""] = (
        edgeEl.getAttribute("data-edge") ?? ""
      ).split("|");
      this.state.removeEdge({ fromNode, fromPort, toNode, toPort });
      return;
    }
    this.state.select(null);
  }

  private onMouseMove(e: MouseEvent): void {
    if (this.dragging) {
      const p = this.canvasPoint(e);
      this.state.moveNode(this.dragging.id, p.x - this.dragging.dx, p.y - this.dragging.dy);
    } else if (this.wire) {
      const p = this.canvasPoint(e);
      this.wire.x = p.x;
      this.wire.y = p.y;
      this.render();
    }
  }

  private onMouseUp(e: MouseEvent): void {
    this.dragging = null;
    if (!this.wire) return;
    const wire = this.wire;
    this.wire = null;
    const target = e.target as Element;
    const portEl = target.closest("[data-port]");
    if (portEl && portEl.getAttribute("data-direction") === "in") {
      const result = this.state.connect(
        wire.fromNode,
        wire.fromPort,
        portEl.getAttribute("data-node")!,
        portEl.getAttribute("data-port")!,
      );
      if (!result.ok && result.reason) this.onRefusal(result.reason);
    }
    this.render();
  }

  /** Exposed for tests and the session script: connect without mouse math. */
  connectPorts(fromNode: string, fromPort: string, toNode: string, toPort: string): void {
    const result = this.state.connect(fromNode, fromPort, toNode, toPort);
    if (!result.ok && result.reason) this.onRefusal(result.reason);
  }

  // -- drawing ---------------------------------------------------------------

  render(): void {
    this.svg.replaceChildren();
    for (const edge of this.state.edges) this.svg.append(this.edgePath(edge));
    if (this.wire) this.svg.append(this.pendingWirePath(this.wire));
    for (const node of this.state.nodes) this.svg.append(this.nodeGroup(node));
    this.fitViewBox();
  }

  private fitViewBox(): void {
    let width = 960;
    let height = 560;
    for (const n of this.state.nodes) {
      width = Math.max(width, n.x + NODE_WIDTH + 80);
      height = Math.max(height, n.y + nodeHeight(n) + 80);
    }
    this.svg.setAttribute("viewBox", `0 0 ${width} ${height}`);
    this.svg.setAttribute("width", String(width));
    this.svg.setAttribute("height", String(height));
  }

  private edgePath(edge: DraftEdge): SVGPathElement {
    const from = this.state.node(edge.fromNode);
    const to = this.state.node(edge.toNode);
    const path = document.createElementNS(SVG_NS, "path");
    if (!from || !to) return path;
    const a = portPosition(from, edge.fromPort, "out");
    const b = portPosition(to, edge.toPort, "in");
    const bend = Math.max(40, Math.abs(b.x - a.x) / 2);
    path.setAttribute(
      "d",
      `M ${a.x} ${a.y} C ${a.x + bend} ${a.y}, ${b.x - bend} ${b.y}, ${b.x} ${b.y}`,
    );
    path.classList.add("edge");
    path.setAttribute(
      "data-edge",
      [edge.fromNode, edge.fromPort, edge.toNode, edge.toPort].join("|"),
    );
    return path;
  }

  private pendingWirePath(wire: PendingWire): SVGPathElement {
    const from = this.state.node(wire.fromNode);
    const path = document.createElementNS(SVG_NS, "path");
    if (!from) return path;
    const a = portPosition(from, wire.fromPort, "out");
    path.setAttribute("d", `M ${a.x} ${a.y} L ${wire.x} ${wire.y}`);
    path.classList.add("edge", "edge-pending");
    return path;
  }

  private nodeGroup(node: DraftNode): SVGGElement {
    const g = document.createElementNS(SVG_NS, "g");
    g.setAttribute("data-node-id", node.id);
    g.setAttribute("data-kind", node.kind);
    g.classList.add("node", `node-${node.kind}`);
    if (this.state.selection === node.id) g.classList.add("node-selected");

    const height = nodeHeight(node);
    const body = document.createElementNS(SVG_NS, "rect");
    body.setAttribute("x", String(node.x));
    body.setAttribute("y", String(node.y));
    body.setAttribute("width", String(NODE_WIDTH));
    body.setAttribute("height", String(height));
    body.setAttribute("rx", "6");
    body.classList.add("node-body");
    g.append(body);

    const header = document.createElementNS(SVG_NS, "text");
    header.setAttribute("x", String(node.x + 8));
    header.setAttribute("y", String(node.y + 17));
    header.classList.add("node-label");
    header.textContent = node.label;
    g.append(header);

    const kindTag = document.createElementNS(SVG_NS, "text");
    kindTag.setAttribute("x", String(node.x + NODE_WIDTH - 8));
    kindTag.setAttribute("y", String(node.y + 17));
    kindTag.setAttribute("text-anchor", "end");
    kindTag.classList.add("node-kind");
    kindTag.textContent = node.kind;
    g.append(kindTag);

    const badge = this.badges[node.id];
    if (badge) {
      const b = document.createElementNS(SVG_NS, "text");
      b.setAttribute("x", String(node.x + 8));
      b.setAttribute("y", String(node.y + height - 6));
      b.classList.add("node-badge", `badge-${badge}`);
      b.textContent = badge;
      g.append(b);
    }

    const ports = portsOf(node);
    for (const p of ports.inPorts) g.append(this.portGroup(node, p.name, "in"));
    for (const p of ports.outPorts) g.append(this.portGroup(node, p.name, "out"));
    return g;
  }

  private portGroup(node: DraftNode, name: string, direction: "in" | "out"): SVGGElement {
    const g = document.createElementNS(SVG_NS, "g");
    const pos = portPosition(node, name, direction);
    const circle = document.createElementNS(SVG_NS, "circle");
    circle.setAttribute("cx", String(pos.x));
    circle.setAttribute("cy", String(pos.y));
    circle.setAttribute("r", String(PORT_RADIUS));
    circle.classList.add("port", `port-${direction}`);
    circle.setAttribute("data-node", node.id);
    circle.setAttribute("data-port", name);
    circle.setAttribute("data-direction", direction);
    g.append(circle);

    const label = document.createElementNS(SVG_NS, "text");
    label.setAttribute("y", String(pos.y + 3));
    label.classList.add("port-label");
    if (direction === "in") {
      label.setAttribute("x", String(pos.x + PORT_RADIUS + 3));
    } else {
      label.setAttribute("x", String(pos.x - PORT_RADIUS - 3));
      label.setAttribute("text-anchor", "end");
    }
    label.textContent = name;
    g.append(label);
    return g;
  }
}
