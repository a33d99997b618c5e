/**
 * Run monitor: polls a run's event stream and status, renders a live feed,
 * and derives node badges purely from events. The event cursor survives
 * network failures; a failed poll doubles the retry interval (capped) and
 * shows a banner, a successful one resets it.
 */
import type { ApiClient } from "./api.js";
import type { ReportDoc, RunEvent, RunStatusDoc } from "./types.js";

export const TERMINAL_STATUSES = ["succeeded", "failed", "cancelled"] as const;

export function isTerminal(status: string): boolean {
  return (TERMINAL_STATUSES as readonly string[]).includes(status);
}

/**
 * Node badge map derived solely from the event log. Later events win, so a
 * node that started and then finished reads "done", and one that started in
 * a second visit flips back to "running".
 */
export function badgesFromEvents(events: readonly RunEvent[]): Record<string, string> {
  const badges: Record<string, string> = {};
  for (const event of events) {
    if (!event.node_id) continue;
    switch (event.kind) {
      case "node_started":
        badges[event.node_id] = "running";
        break;
      case "node_finished":
        badges[event.node_id] = "done";
        break;
      case "node_skipped":
        badges[event.node_id] = "skipped";
        break;
      case "node_failed":
        badges[event.node_id] = "failed";
        break;
      case "approval_requested":
        badges[event.node_id] = "waiting";
        break;
      default:
        break;
    }
  }
  return badges;
}

/** Next retry delay after a failure: double, capped. */
export function backoff(currentMs: number, capMs: number): number {
  return Math.min(currentMs * 2, capMs);
}

function eventLine(event: RunEvent): string {
  const parts = [`#${event.seq}`, event.kind];
  if (event.node_id) parts.push(event.node_id);
  const detail = event.detail ?? {};
  if (event.kind === "object_published" && typeof detail["schema"] === "string") {
    parts.push(`${detail["schema"]} @ ${String(detail["port"])}`);
  } else if (event.kind === "branch_taken") {
    parts.push(`branch=${String(detail["branch"])}`);
  } else if (event.kind === "run_finished") {
    parts.push(`status=${String(detail["status"])}`);
  } else if (event.kind === "approval_received") {
    parts.push(detail["approved"] ? "approved" : "rejected");
  }
  return parts.join("  ");
}

export interface MonitorOptions {
  intervalMs?: number;
  maxIntervalMs?: number;
  onBadges?: (badges: Record<string, string>) => void;
  onApprovalNeeded?: (status: RunStatusDoc) => void;
  onTerminal?: (status: RunStatusDoc, report: ReportDoc | null) => void;
  schedule?: (fn: () => void, ms: number) => unknown;
  cancel?: (handle: unknown) => void;
}

export class RunMonitor {
  readonly root: HTMLElement;
  readonly runId: string;
  events: RunEvent[] = [];
  cursor = 0;
  status: RunStatusDoc | null = null;
  report: ReportDoc | null = null;

  private api: ApiClient;
  private baseInterval: number;
  private maxInterval: number;
  private currentInterval: number;
  private opts: MonitorOptions;
  private schedule: (fn: () => void, ms: number) => unknown;
  private cancelFn: (handle: unknown) => void;
  private timer: unknown = null;
  private stopped = false;
  private approvalNotifiedFor: string | null = null;

  private statusLine: HTMLElement;
  private banner: HTMLElement;
  private feed: HTMLOListElement;
  private terminalBox: HTMLElement;

  constructor(api: ApiClient, runId: string, opts: MonitorOptions = {}) {
    this.api = api;
    this.runId = runId;
    this.opts = opts;
    this.baseInterval = opts.intervalMs ?? 1000;
    this.maxInterval = opts.maxIntervalMs ?? 10000;
    this.currentInterval = this.baseInterval;
    this.schedule = opts.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    this.cancelFn = opts.cancel ?? ((handle) => clearTimeout(handle as number));

    this.root = document.createElement("div");
    this.root.className = "run-monitor";
    this.root.dataset["runId"] = runId;

    this.statusLine = document.createElement("div");
    this.statusLine.className = "run-status";
    this.statusLine.textContent = `run ${runId}: starting`;

    this.banner = document.createElement("div");
    this.banner.className = "retry-banner";
    this.banner.hidden = true;

    this.feed = document.createElement("ol");
    this.feed.className = "event-feed";

    this.terminalBox = document.createElement("div");
    this.terminalBox.className = "terminal-box";

    this.root.append(this.statusLine, this.banner, this.feed, this.terminalBox);
  }

  start(): void {
    this.stopped = false;
    void this.tick();
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) {
      this.cancelFn(this.timer);
      this.timer = null;
    }
  }

  /** One poll cycle. Safe to call directly; any pending timer is replaced. */
  async tick(): Promise<void> {
    if (this.timer !== null) {
      this.cancelFn(this.timer);
      this.timer = null;
    }
    try {
      const batch = await this.api.events(this.runId, this.cursor);
      if (batch.events.length > 0) {
        this.events.push(...batch.events);
        this.renderFeed(batch.events);
      }
      this.cursor = batch.next_since;
      this.status = await this.api.runStatus(this.runId);
      this.banner.hidden = true;
      this.currentInterval = this.baseInterval;
      this.renderStatus();
      this.opts.onBadges?.(badgesFromEvents(this.events));

      if (
        this.status.status === "awaiting_approval" &&
        this.status.pending_approval &&
        this.approvalNotifiedFor !== this.status.pending_approval.node_id
      ) {
        this.approvalNotifiedFor = this.status.pending_approval.node_id;
        this.opts.onApprovalNeeded?.(this.status);
      }
      if (this.status.status !== "awaiting_approval") {
        // A decided gate may come around again on a later visit.
        this.approvalNotifiedFor = null;
      }

      if (isTerminal(this.status.status)) {
        this.stop();
        await this.loadReport();
        this.opts.onTerminal?.(this.status, this.report);
        return;
      }
    } catch {
      // Keep the cursor; we pick up exactly where the stream broke.
      this.currentInterval = backoff(this.currentInterval, this.maxInterval);
      this.banner.hidden = false;
      this.banner.textContent = `connection lost, retrying in ${Math.round(
        this.currentInterval / 1000,
      )}s (events up to #${this.cursor} kept)`;
    }
    if (!this.stopped) {
      this.timer = this.schedule(() => void this.tick(), this.currentInterval);
    }
  }

  private async loadReport(): Promise<void> {
    try {
      this.report = await this.api.report(this.runId);
    } catch {
      this.report = null;
    }
    this.renderTerminal();
  }

  private renderStatus(): void {
    if (!this.status) return;
    this.statusLine.textContent = `run ${this.runId}: ${this.status.status}`;
    this.statusLine.dataset["status"] = this.status.status;
  }

  private renderFeed(fresh: readonly RunEvent[]): void {
    for (const event of fresh) {
      const li = document.createElement("li");
      li.className = `event event-${event.kind}`;
      li.textContent = eventLine(event);
      this.feed.append(li);
    }
  }

  private renderTerminal(): void {
    this.terminalBox.replaceChildren();
    if (!this.status) return;

    const link = document.createElement("a");
    link.className = "report-link";
    link.href = this.api.reportUrl(this.runId);
    link.target = "_blank";
    link.textContent = "open full report";
    this.terminalBox.append(link);

    const verdicts = this.report?.validation?.per_step ?? [];
    if (verdicts.length > 0) {
      const table = document.createElement("table");
      table.className = "verdict-table";
      const head = table.createTHead().insertRow();
      for (const col of ["step", "status", "confidence", "window"]) {
        const th = document.createElement("th");
        th.textContent = col;
        head.append(th);
      }
      const body = table.createTBody();
      for (const v of verdicts) {
        const row = body.insertRow();
        row.insertCell().textContent = String(v.step_no);
        const status = row.insertCell();
        status.textContent = v.status;
        status.className = `verdict-${v.status}`;
        row.insertCell().textContent = v.confidence.toFixed(2);
        row.insertCell().textContent = `${v.window_start}..${v.window_end}`;
      }
      this.terminalBox.append(table);
      if (this.report?.validation?.aggregate) {
        const agg = document.createElement("div");
        agg.className = "verdict-aggregate";
        agg.textContent = `aggregate: ${this.report.validation.aggregate}`;
        this.terminalBox.append(agg);
      }
    }
  }
}
