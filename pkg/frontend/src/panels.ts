/**
 * Node configuration panel.
 *
 * Shows an editor for the selected node, switching form layout by kind.
 * Edits go through CanvasState.updateConfig so edge filtering and dirty
 * tracking stay in one place. Validation feedback below the form lists
 * current draft diagnostics so problems surface while typing, not at save.
 */
import {
  AGENT_ROLES,
  LOGIC_BUILTINS,
  LOGIC_PARAMS,
  MEDIA_TYPES,
  OUTPUT_SCHEMAS,
  PREDICATES,
  TELEMCP_MAPPERS,
  type DraftNode,
} from "./schema.js";
import type { CanvasState } from "./state.js";
import type { SchemaDocument } from "./types.js";

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

function fieldRow(labelText: string, control: HTMLElement): HTMLElement {
  const row = el("label", "field-row");
  row.append(el("span", "field-label", labelText), control);
  return row;
}

function selectInput(
  options: readonly string[],
  current: string,
  onChange: (value: string) => void,
  allowEmpty = false,
): HTMLSelectElement {
  const select = el("select");
  if (allowEmpty) {
    const opt = el("option", undefined, "(none)");
    opt.value = "";
    select.append(opt);
  }
  for (const value of options) {
    const opt = el("option", undefined, value);
    opt.value = value;
    if (value === current) opt.selected = true;
    select.append(opt);
  }
  if (allowEmpty && !options.includes(current)) select.value = "";
  select.addEventListener("change", () => onChange(select.value));
  return select;
}

function textInput(current: string, onChange: (value: string) => void): HTMLInputElement {
  const input = el("input");
  input.type = "text";
  input.value = current;
  input.addEventListener("change", () => onChange(input.value));
  return input;
}

function textArea(current: string, onChange: (value: string) => void): HTMLTextAreaElement {
  const area = el("textarea");
  area.value = current;
  area.rows = 4;
  area.addEventListener("change", () => onChange(area.value));
  return area;
}

function numberInput(
  current: number,
  onChange: (value: number) => void,
  step = 1,
): HTMLInputElement {
  const input = el("input");
  input.type = "number";
  input.step = String(step);
  input.value = String(current);
  input.addEventListener("change", () => {
    const v = Number(input.value);
    if (Number.isFinite(v)) onChange(v);
  });
  return input;
}

/**
 * Checkbox list over the top-level fields of a named schema. Used by the
 * telemcp mapper panel and the pcap-processing panel to pick selector paths.
 */
export function fieldSelector(
  schemas: SchemaDocument | null,
  schemaName: string,
  selected: string[],
  onChange: (paths: string[]) => void,
): HTMLElement {
  const box = el("div", "field-selector");
  const fields = schemas?.schemas?.[schemaName];
  const names = fields ? Object.keys(fields) : selected;
  const report = () => {
    const checked = Array.from(
      box.querySelectorAll<HTMLInputElement>("input:checked"),
      (i) => i.value,
    );
    onChange(checked);
  };
  for (const name of names) {
    const row = el("label", "selector-row");
    const cb = el("input");
    cb.type = "checkbox";
    cb.value = name;
    cb.checked = selected.includes(name);
    cb.addEventListener("change", report);
    row.append(cb, el("span", undefined, name));
    box.append(row);
  }
  return box;
}

export class ConfigPanel {
  readonly root: HTMLElement;
  private state: CanvasState;
  private schemas: SchemaDocument | null = null;

  constructor(state: CanvasState) {
    this.state = state;
    this.root = el("div", "config-panel");
    state.subscribe(() => this.render());
    this.render();
  }

  setSchemas(doc: SchemaDocument): void {
    this.schemas = doc;
    this.render();
  }

  render(): void {
    this.root.replaceChildren();
    const node = this.state.selection ? this.state.node(this.state.selection) : null;
    if (!node) {
      this.root.append(el("p", "panel-hint", "Select a node to edit its configuration."));
      this.renderDiagnostics();
      return;
    }

    const title = el("div", "panel-title");
    title.append(el("span", "panel-node-id", node.id), el("span", "panel-node-kind", node.kind));
    this.root.append(title);

    this.root.append(
      fieldRow(
        "label",
        textInput(node.label, (v) => this.state.setLabel(node.id, v)),
      ),
    );

    switch (node.kind) {
      case "input":
        this.renderInput(node);
        break;
      case "agent":
        this.renderAgent(node);
        break;
      case "telemcp":
        this.renderTelemcp(node);
        break;
      case "logic":
        this.renderLogic(node);
        break;
      case "conditional":
        this.renderConditional(node);
        break;
      case "output":
        this.root.append(el("p", "panel-hint", "Sink node; anything wired in is collected."));
        break;
    }

    const remove = el("button", "danger", "Delete node");
    remove.addEventListener("click", () => this.state.removeNode(node.id));
    this.root.append(remove);
    this.renderDiagnostics();
  }

  private set(node: DraftNode, mutate: (config: Record<string, unknown>) => void): void {
    this.state.updateConfig(node.id, mutate);
  }

  private renderInput(node: DraftNode): void {
    const media = String(node.config["media_type"] ?? "text");
    this.root.append(
      fieldRow(
        "media type",
        selectInput(MEDIA_TYPES, media, (v) => this.set(node, (c) => (c["media_type"] = v))),
      ),
    );
  }

  private agentSubForm(
    node: DraftNode,
    read: (config: Record<string, unknown>) => Record<string, unknown>,
  ): HTMLElement {
    const box = el("div", "agent-form");
    const agent = read(node.config);
    const setAgent = (key: string, value: unknown) =>
      this.set(node, (c) => {
        (read(c) as Record<string, unknown>)[key] = value;
      });
    box.append(
      fieldRow(
        "agent id",
        textInput(String(agent["id"] ?? ""), (v) => setAgent("id", v)),
      ),
      fieldRow(
        "role",
        selectInput(AGENT_ROLES, String(agent["role"] ?? "gen"), (v) => setAgent("role", v)),
      ),
      fieldRow(
        "model",
        textInput(String(agent["model_id"] ?? ""), (v) => setAgent("model_id", v)),
      ),
      fieldRow(
        "system prompt",
        textArea(String(agent["system_prompt"] ?? ""), (v) => setAgent("system_prompt", v)),
      ),
      fieldRow(
        "temperature",
        numberInput(Number(agent["temperature"] ?? 0), (v) => setAgent("temperature", v), 0.1),
      ),
    );
    return box;
  }

  private renderAgent(node: DraftNode): void {
    this.root.append(
      this.agentSubForm(node, (c) => {
        if (!c["agent"] || typeof c["agent"] !== "object") c["agent"] = {};
        return c["agent"] as Record<string, unknown>;
      }),
      fieldRow(
        "prompt template",
        textArea(String(node.config["prompt_template"] ?? ""), (v) =>
          this.set(node, (c) => (c["prompt_template"] = v)),
        ),
      ),
      fieldRow(
        "output schema",
        selectInput(
          OUTPUT_SCHEMAS,
          String(node.config["output_schema"] ?? ""),
          (v) =>
            this.set(node, (c) => {
              if (v) c["output_schema"] = v;
              else delete c["output_schema"];
            }),
          true,
        ),
      ),
    );
  }

  private renderTelemcp(node: DraftNode): void {
    const mapper = String(node.config["mapper"] ?? "decoded-trace");
    this.root.append(
      fieldRow(
        "mapper",
        selectInput(TELEMCP_MAPPERS, mapper, (v) => this.set(node, (c) => (c["mapper"] = v))),
      ),
    );
    const paths = Array.isArray(node.config["selector_paths"])
      ? (node.config["selector_paths"] as string[])
      : [];
    this.root.append(el("div", "field-label", "selector paths"));
    this.root.append(
      fieldSelector(this.schemas, "message-record", paths, (next) =>
        this.set(node, (c) => (c["selector_paths"] = next)),
      ),
    );
  }

  private renderLogic(node: DraftNode): void {
    const builtin = String(node.config["builtin"] ?? "custom");
    this.root.append(
      fieldRow(
        "builtin",
        selectInput(LOGIC_BUILTINS, builtin, (v) =>
          this.set(node, (c) => {
            c["builtin"] = v;
            c["params"] = {};
          }),
        ),
      ),
    );

    const specs = LOGIC_PARAMS[builtin] ?? [];
    if (specs.length > 0) {
      const params = (node.config["params"] ?? {}) as Record<string, unknown>;
      const box = el("div", "params-form");
      for (const spec of specs) {
        const current = Number(params[spec.name] ?? spec.fallback);
        box.append(
          fieldRow(
            spec.name.replaceAll("_", " "),
            numberInput(
              current,
              (v) =>
                this.set(node, (c) => {
                  if (!c["params"] || typeof c["params"] !== "object") c["params"] = {};
                  (c["params"] as Record<string, unknown>)[spec.name] = spec.integer
                    ? Math.round(v)
                    : v;
                }),
              spec.integer ? 1 : 0.05,
            ),
          ),
        );
      }
      this.root.append(el("div", "field-label", "loop parameters"), box);
    }

    if (builtin === "sliding-window-validation") {
      this.root.append(
        el("div", "field-label", "validation agent"),
        this.agentSubForm(node, (c) => {
          if (!c["agent"] || typeof c["agent"] !== "object") c["agent"] = {};
          return c["agent"] as Record<string, unknown>;
        }),
      );
    }

    if (builtin === "pcap-processing") {
      const paths = Array.isArray(node.config["selector_paths"])
        ? (node.config["selector_paths"] as string[])
        : [];
      this.root.append(el("div", "field-label", "selector paths"));
      this.root.append(
        fieldSelector(this.schemas, "message-record", paths, (next) =>
          this.set(node, (c) => (c["selector_paths"] = next)),
        ),
      );
    }

    if (builtin === "custom") {
      this.root.append(
        fieldRow(
          "script ref",
          textInput(String(node.config["script_ref"] ?? ""), (v) =>
            this.set(node, (c) => (c["script_ref"] = v)),
          ),
        ),
      );
    }
  }

  private renderConditional(node: DraftNode): void {
    const predicate = String(node.config["predicate"] ?? "human-approval");
    this.root.append(
      fieldRow(
        "predicate",
        selectInput(PREDICATES, predicate, (v) =>
          this.set(node, (c) => {
            c["predicate"] = v;
            c["branches"] = v === "human-approval" ? ["approve", "reject"] : ["pass", "fail"];
          }),
        ),
      ),
    );

    const branches = Array.isArray(node.config["branches"])
      ? (node.config["branches"] as string[])
      : [];
    if (predicate === "human-approval") {
      this.root.append(el("p", "panel-hint", "Branches are fixed: approve, reject."));
    } else {
      const partial = el("input");
      partial.type = "checkbox";
      partial.checked = branches.includes("partial");
      partial.addEventListener("change", () =>
        this.set(node, (c) => {
          c["branches"] = partial.checked ? ["pass", "fail", "partial"] : ["pass", "fail"];
        }),
      );
      const row = el("label", "selector-row");
      row.append(partial, el("span", undefined, "include partial branch"));
      this.root.append(el("div", "field-label", "branches: pass, fail"), row);
    }

    const strict = el("input");
    strict.type = "checkbox";
    strict.checked = Boolean(node.config["strict"]);
    strict.addEventListener("change", () =>
      this.set(node, (c) => {
        if (strict.checked) c["strict"] = true;
        else delete c["strict"];
      }),
    );
    const strictRow = el("label", "selector-row");
    strictRow.append(strict, el("span", undefined, "strict (fail run on missing branch)"));
    this.root.append(strictRow);
  }

  private renderDiagnostics(): void {
    const diags = this.state.diagnostics();
    if (diags.length === 0) return;
    const list = el("ul", "diagnostics");
    for (const d of diags) {
      list.append(el("li", `diag diag-${d.code}`, `${d.code}: ${d.message} (${d.where})`));
    }
    this.root.append(el("div", "field-label", "draft problems"), list);
  }
}
