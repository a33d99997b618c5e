import { describe, expect, it } from "vitest";

import { CanvasState } from "../src/state.js";
import type { GraphDoc } from "../src/types.js";

function pipeline(): CanvasState {
  const state = new CanvasState();
  const src = state.addNode("input", 10, 20);
  const dst = state.addNode("output", 300, 20);
  state.connect(src.id, "artifact", dst.id, "sink");
  return state;
}

describe("CanvasState editing", () => {
  it("hands out unique ids per kind", () => {
    const state = new CanvasState();
    const a = state.addNode("agent", 0, 0);
    const b = state.addNode("agent", 0, 0);
    expect(a.id).not.toBe(b.id);
    expect(a.id).toMatch(/^agent_\d+$/);
  });

  it("marks the draft dirty on every edit", () => {
    const state = new CanvasState();
    expect(state.dirty).toBe(false);
    state.addNode("input", 0, 0);
    expect(state.dirty).toBe(true);
  });

  it("removing a node drops its edges", () => {
    const state = pipeline();
    expect(state.edges).toHaveLength(1);
    state.removeNode(state.nodes[0]!.id);
    expect(state.edges).toHaveLength(0);
  });

  it("a config change that removes ports drops stale edges", () => {
    const state = new CanvasState();
    const src = state.addNode("input", 0, 0);
    const gate = state.addNode("conditional", 200, 0);
    const dst = state.addNode("output", 400, 0);
    state.updateConfig(gate.id, (c) => {
      c.predicate = "verdict-branch";
      c.branches = ["pass", "fail", "partial"];
    });
    state.connect(src.id, "artifact", gate.id, "subject");
    state.connect(gate.id, "partial", dst.id, "sink");
    expect(state.edges).toHaveLength(2);
    state.updateConfig(gate.id, (c) => {
      c.branches = ["pass", "fail"];
    });
    expect(state.edges).toHaveLength(1);
    expect(state.edges[0]?.toNode).toBe(gate.id);
  });
});

describe("CanvasState.connect", () => {
  it("accepts a compatible pair once", () => {
    const state = pipeline();
    const [src, dst] = state.nodes;
    expect(state.connect(src!.id, "artifact", dst!.id, "sink")).toEqual({
      ok: false,
      reason: "edge already exists",
    });
  });

  it("refuses self-feeds and unknown ports", () => {
    const state = new CanvasState();
    const a = state.addNode("agent", 0, 0);
    expect(state.connect(a.id, "reply", a.id, "context").ok).toBe(false);
    const b = state.addNode("output", 0, 0);
    expect(state.connect(a.id, "nope", b.id, "sink").reason).toBe("no such port");
  });

  it("refuses schema mismatches with a readable reason", () => {
    const state = new CanvasState();
    const flow = state.addNode("input", 0, 0);
    state.updateConfig(flow.id, (c) => (c.media_type = "flow-json"));
    const proc = state.addNode("logic", 0, 0);
    state.updateConfig(proc.id, (c) => {
      c.builtin = "pcap-processing";
      c.params = {};
    });
    const result = state.connect(flow.id, "artifact", proc.id, "decoded");
    expect(result.ok).toBe(false);
    expect(result.reason).toContain("schema mismatch");
  });

  it("rolls back an edge that would close a cycle", () => {
    const state = new CanvasState();
    const a = state.addNode("logic", 0, 0);
    const b = state.addNode("logic", 0, 0);
    for (const id of [a.id, b.id]) {
      state.updateConfig(id, (c) => {
        c.builtin = "custom";
        c.script_ref = "s";
        c.params = {};
      });
    }
    expect(state.connect(a.id, "out", b.id, "in").ok).toBe(true);
    const blocked = state.connect(b.id, "out", a.id, "in");
    expect(blocked.reason).toBe("connection would create a cycle");
    expect(state.edges).toHaveLength(1);
  });
});

describe("save gating and round-trip", () => {
  it("saveEnabled needs dirty, nodes, and a clean draft", () => {
    const state = new CanvasState();
    expect(state.saveEnabled()).toBe(false); // empty
    const src = state.addNode("input", 0, 0);
    expect(state.saveEnabled()).toBe(false); // no output yet
    const dst = state.addNode("output", 0, 0);
    state.connect(src.id, "artifact", dst.id, "sink");
    expect(state.saveEnabled()).toBe(true);
    state.markSaved();
    expect(state.saveEnabled()).toBe(false); // clean again
  });

  it("documents round-trip with layout and name", () => {
    const state = pipeline();
    state.setName("round-trip");
    state.moveNode(state.nodes[0]!.id, 123.6, 45.2);
    const doc = state.toDocument();
    expect(doc.version).toBe("1.0");
    expect(doc.metadata?.layout?.[state.nodes[0]!.id]).toEqual({ x: 124, y: 45 });

    const restored = new CanvasState();
    restored.loadDocument(doc);
    expect(restored.name).toBe("round-trip");
    expect(restored.dirty).toBe(false);
    expect(restored.toDocument()).toEqual(doc);
  });

  it("loads documents without layout using fallback positions", () => {
    const doc: GraphDoc = {
      version: "1.0",
      name: "bare",
      nodes: [
        { id: "a", kind: "input" },
        { id: "b", kind: "output" },
      ],
      edges: [{ from: "a.artifact", to: "b.sink" }],
    };
    const state = new CanvasState();
    state.loadDocument(doc);
    const [a, b] = state.nodes;
    expect(a && b && (a.x !== b.x || a.y !== b.y)).toBe(true);
    expect(state.diagnostics()).toEqual([]);
  });

  it("config edits after loading do not leak into the source document", () => {
    const state = pipeline();
    const doc = state.toDocument();
    const other = new CanvasState();
    other.loadDocument(doc);
    other.updateConfig(other.nodes[0]!.id, (c) => (c.media_type = "pcap"));
    expect(doc.nodes[0]?.config?.media_type).not.toBe("pcap");
  });
});
