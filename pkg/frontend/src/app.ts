/**
 * Application shell: three tabs (Canvas, Runs, Chat) over one ApiClient.
 *
 * Canvas: palette, SVG editor, per-node config panel, toolbar with
 * New / Load prebuilt / Validate / Save / Run. Save stays disabled until
 * the draft is non-empty, dirty, and free of diagnostics; the server is
 * still the final validator and its complaints land in the banner.
 *
 * Runs: recent runs plus a live monitor for the selected one. The monitor
 * drives node badges on the canvas and pops the approval dialog when a run
 * parks at a human gate.
 *
 * Chat: direct line to any agent registered by a stored graph.
 */
import { ApiRequestError, type ApiClient } from "./api.js";
import { ApprovalDialog } from "./approval.js";
import { NodeCanvas } from "./canvas.js";
import { ChatPanel } from "./chat.js";
import { RunMonitor } from "./monitor.js";
import { ConfigPanel } from "./panels.js";
import { KIND_HINTS, KIND_LABELS, NODE_KINDS } from "./schema.js";
import { CanvasState } from "./state.js";
import type { BindingDoc, PrebuiltEntry, RunStatusDoc } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

type TabName = "canvas" | "runs" | "chat";

export class App {
  readonly root: HTMLElement;
  readonly state: CanvasState;
  readonly canvas: NodeCanvas;
  readonly configPanel: ConfigPanel;
  readonly chatPanel: ChatPanel;
  monitor: RunMonitor | null = null;
  approvalDialog: ApprovalDialog | null = null;

  private api: ApiClient;
  private banner: HTMLElement;
  private nameInput: HTMLInputElement;
  private saveBtn: HTMLButtonElement;
  private runBtn: HTMLButtonElement;
  private prebuiltSelect: HTMLSelectElement;
  private views: Record<TabName, HTMLElement>;
  private tabButtons: Record<TabName, HTMLButtonElement>;
  private runListBox: HTMLElement;
  private monitorBox: HTMLElement;
  private runDialogBox: HTMLElement;

  /** Bindings and variants remembered from the last prebuilt instantiate. */
  private lastBindings: Record<string, BindingDoc> = {};
  private lastVariants: Record<string, Record<string, BindingDoc>> = {};

  constructor(api: ApiClient) {
    this.api = api;
    this.state = new CanvasState();
    this.root = el("div", "app");

    // -- header and tabs --
    const header = el("header", "app-header");
    header.append(el("span", "app-title", "telehub canvas"));
    const tabBar = el("nav", "tab-bar");
    this.tabButtons = {
      canvas: el("button", "tab", "Canvas"),
      runs: el("button", "tab", "Runs"),
      chat: el("button", "tab", "Chat"),
    };
    for (const name of ["canvas", "runs", "chat"] as const) {
      const btn = this.tabButtons[name];
      btn.dataset["tab"] = name;
      btn.addEventListener("click", () => this.showTab(name));
      tabBar.append(btn);
    }
    header.append(tabBar);
    this.root.append(header);

    this.banner = el("div", "banner");
    this.banner.hidden = true;
    this.root.append(this.banner);

    // -- canvas view --
    const canvasView = el("section", "view view-canvas");
    const toolbar = el("div", "toolbar");

    this.nameInput = el("input");
    this.nameInput.type = "text";
    this.nameInput.className = "graph-name";
    this.nameInput.placeholder = "graph name";
    this.nameInput.value = this.state.name;
    this.nameInput.addEventListener("change", () => {
      this.state.setName(this.nameInput.value);
    });

    const newBtn = el("button", undefined, "New");
    newBtn.addEventListener("click", () => {
      this.state.clear();
      this.lastBindings = {};
      this.lastVariants = {};
      this.nameInput.value = this.state.name;
    });

    this.prebuiltSelect = el("select", "prebuilt-select");
    const loadBtn = el("button", undefined, "Load prebuilt");
    loadBtn.addEventListener("click", () => void this.loadPrebuilt());

    const validateBtn = el("button", undefined, "Validate");
    validateBtn.addEventListener("click", () => {
      const diags = this.state.diagnostics();
      if (diags.length === 0) this.notify("draft is valid", "ok");
      else this.notify(`${diags.length} problem(s); see the panel`, "warn");
    });

    this.saveBtn = el("button", undefined, "Save");
    this.saveBtn.addEventListener("click", () => void this.saveGraph());

    this.runBtn = el("button", undefined, "Run");
    this.runBtn.addEventListener("click", () => this.openRunDialog());

    toolbar.append(
      this.nameInput,
      newBtn,
      this.prebuiltSelect,
      loadBtn,
      validateBtn,
      this.saveBtn,
      this.runBtn,
    );
    canvasView.append(toolbar);

    const workspace = el("div", "workspace");
    workspace.append(this.buildPalette());
    this.canvas = new NodeCanvas(this.state, (reason) => this.notify(reason, "warn"));
    const canvasHolder = el("div", "canvas-holder");
    canvasHolder.append(this.canvas.svg);
    workspace.append(canvasHolder);
    this.configPanel = new ConfigPanel(this.state);
    workspace.append(this.configPanel.root);
    canvasView.append(workspace);

    this.runDialogBox = el("div", "run-dialog-box");
    canvasView.append(this.runDialogBox);

    // -- runs view --
    const runsView = el("section", "view view-runs");
    const refreshBtn = el("button", undefined, "Refresh");
    refreshBtn.addEventListener("click", () => void this.refreshRuns());
    this.runListBox = el("div", "run-list");
    this.monitorBox = el("div", "monitor-box");
    runsView.append(refreshBtn, this.runListBox, this.monitorBox);

    // -- chat view --
    const chatView = el("section", "view view-chat");
    this.chatPanel = new ChatPanel(api);
    chatView.append(this.chatPanel.root);

    this.views = { canvas: canvasView, runs: runsView, chat: chatView };
    this.root.append(canvasView, runsView, chatView);
    this.showTab("canvas");

    this.state.subscribe(() => {
      this.saveBtn.disabled = !this.state.saveEnabled();
      this.chatPanel.setAgents(this.draftAgentIds());
    });
    this.saveBtn.disabled = true;
  }

  /** Fetch server-side context the UI needs (schemas, prebuilt catalog). */
  async init(): Promise<void> {
    try {
      const registry = await this.api.schemas();
      this.configPanel.setSchemas(registry.document);
    } catch (err) {
      this.notify(`schemas unavailable: ${String(err)}`, "warn");
    }
    try {
      const catalog = await this.api.listPrebuilt();
      this.setPrebuilt(catalog.prebuilt);
    } catch (err) {
      this.notify(`prebuilt catalog unavailable: ${String(err)}`, "warn");
    }
  }

  private buildPalette(): HTMLElement {
    const palette = el("div", "palette");
    palette.append(el("div", "palette-title", "nodes"));
    for (const kind of NODE_KINDS) {
      const entry = el("div", `palette-entry palette-${kind}`);
      entry.draggable = true;
      entry.dataset["kind"] = kind;
      entry.title = KIND_HINTS[kind];
      entry.append(
        el("span", "palette-label", KIND_LABELS[kind]),
        el("span", "palette-kind", kind),
      );
      entry.addEventListener("dragstart", (e) => {
        e.dataTransfer?.setData("application/x-node-kind", kind);
      });
      entry.addEventListener("click", () => {
        const n = this.state.nodes.length;
        this.state.addNode(kind, 80 + (n % 5) * 40, 80 + (n % 7) * 30);
      });
      palette.append(entry);
    }
    return palette;
  }

  private draftAgentIds(): string[] {
    const ids: string[] = [];
    for (const node of this.state.nodes) {
      const id = node.config.agent?.id;
      if (typeof id === "string" && id) ids.push(id);
    }
    return ids;
  }

  showTab(name: TabName): void {
    for (const tab of ["canvas", "runs", "chat"] as const) {
      this.views[tab].hidden = tab !== name;
      this.tabButtons[tab].classList.toggle("tab-active", tab === name);
    }
    if (name === "runs") void this.refreshRuns();
  }

  notify(message: string, tone: "ok" | "warn" = "ok"): void {
    this.banner.textContent = message;
    this.banner.className = `banner banner-${tone}`;
    this.banner.hidden = false;
  }

  private setPrebuilt(entries: PrebuiltEntry[]): void {
    this.prebuiltSelect.replaceChildren();
    for (const entry of entries) {
      const opt = el("option", undefined, entry.title);
      opt.value = entry.id;
      this.prebuiltSelect.append(opt);
    }
  }

  async loadPrebuilt(): Promise<void> {
    const id = this.prebuiltSelect.value;
    if (!id) {
      this.notify("no prebuilt selected", "warn");
      return;
    }
    try {
      const inst = await this.api.instantiatePrebuilt(id);
      const doc = await this.api.getGraph(inst.graph);
      this.state.loadDocument(doc);
      this.nameInput.value = this.state.name;
      this.lastBindings = inst.bindings;
      this.lastVariants = inst.variants;
      this.notify(
        `loaded ${inst.graph} (${this.state.nodes.length} nodes)` +
          (inst.created ? ", stored on server" : ""),
        "ok",
      );
    } catch (err) {
      this.notify(`load failed: ${String(err)}`, "warn");
    }
  }

  async saveGraph(): Promise<void> {
    this.state.setName(this.nameInput.value);
    try {
      const result = await this.api.createGraph(this.state.toDocument());
      this.state.markSaved();
      this.saveBtn.disabled = true;
      this.notify(`saved graph ${result.name}`, "ok");
    } catch (err) {
      if (err instanceof ApiRequestError && err.code === "duplicate_name") {
        this.notify("a graph with this name already exists; rename and save again", "warn");
      } else {
        this.notify(`save failed: ${String(err)}`, "warn");
      }
    }
  }

  // -- run launch -----------------------------------------------------------

  openRunDialog(): void {
    this.runDialogBox.replaceChildren();
    const inputs = this.state.nodes.filter((n) => n.kind === "input");
    const form = el("div", "run-dialog");
    form.append(el("h3", undefined, `Start run: ${this.state.name}`));

    const areas = new Map<string, HTMLTextAreaElement>();
    const fillFrom = (bindings: Record<string, BindingDoc>) => {
      for (const [nodeId, area] of areas) {
        const doc = bindings[nodeId];
        if (doc?.text !== undefined) area.value = doc.text;
      }
    };

    const variantNames = Object.keys(this.lastVariants);
    if (variantNames.length > 0) {
      const variantSelect = el("select", "variant-select");
      const base = el("option", undefined, "base bindings");
      base.value = "";
      variantSelect.append(base);
      for (const name of variantNames) {
        const opt = el("option", undefined, `variant: ${name}`);
        opt.value = name;
        variantSelect.append(opt);
      }
      variantSelect.addEventListener("change", () => {
        fillFrom(this.lastBindings);
        const overrides = this.lastVariants[variantSelect.value];
        if (overrides) fillFrom(overrides);
      });
      form.append(variantSelect);
    }

    for (const node of inputs) {
      const area = el("textarea", "binding-input");
      area.rows = 3;
      area.dataset["nodeId"] = node.id;
      const prefill = this.lastBindings[node.id];
      if (prefill?.text !== undefined) area.value = prefill.text;
      areas.set(node.id, area);
      const row = el("label", "field-row");
      row.append(el("span", "field-label", `${node.id} (${node.label})`), area);
      form.append(row);
    }
    if (inputs.length === 0) {
      form.append(el("p", "panel-hint", "draft has no input nodes"));
    }

    const start = el("button", "start-run", "Start");
    start.addEventListener("click", () => {
      const bindings: Record<string, BindingDoc> = {};
      for (const [nodeId, area] of areas) bindings[nodeId] = { text: area.value };
      void this.startRun(bindings);
    });
    const cancel = el("button", undefined, "Cancel");
    cancel.addEventListener("click", () => this.runDialogBox.replaceChildren());
    form.append(start, cancel);
    this.runDialogBox.append(form);
  }

  async startRun(bindings: Record<string, BindingDoc>): Promise<void> {
    try {
      const started = await this.api.startRun(this.state.name, bindings);
      this.runDialogBox.replaceChildren();
      this.notify(`run ${started.run_id} started`, "ok");
      this.showTab("runs");
      this.watchRun(started.run_id);
    } catch (err) {
      if (err instanceof ApiRequestError && err.code === "unknown_graph") {
        this.notify("graph is not on the server yet; save it first", "warn");
      } else {
        this.notify(`run failed to start: ${String(err)}`, "warn");
      }
    }
  }

  watchRun(runId: string): void {
    this.monitor?.stop();
    this.monitorBox.replaceChildren();
    this.monitor = new RunMonitor(this.api, runId, {
      onBadges: (badges) => this.canvas.setBadges(badges),
      onApprovalNeeded: (status) => this.openApproval(status),
      onTerminal: (status) => {
        this.notify(`run ${runId} ${status.status}`, status.status === "succeeded" ? "ok" : "warn");
      },
    });
    this.monitorBox.append(this.monitor.root);
    this.monitor.start();
  }

  private openApproval(status: RunStatusDoc): void {
    if (!status.pending_approval || this.approvalDialog) return;
    const dialog = new ApprovalDialog(this.api, status.run_id, status.pending_approval, () => {
      this.approvalDialog = null;
      void this.monitor?.tick();
    });
    this.approvalDialog = dialog;
    dialog.open();
  }

  async refreshRuns(): Promise<void> {
    try {
      const { runs } = await this.api.listRuns();
      this.runListBox.replaceChildren();
      for (const run of runs) {
        const row = el("div", "run-row");
        row.dataset["runId"] = run.run_id;
        row.append(
          el("span", "run-id", run.run_id),
          el("span", `run-state run-${run.status}`, run.status),
          el("span", "run-graph", run.graph ?? ""),
        );
        row.addEventListener("click", () => this.watchRun(run.run_id));
        this.runListBox.append(row);
      }
    } catch (err) {
      this.notify(`runs unavailable: ${String(err)}`, "warn");
    }
  }
}
