/**
 * Thin typed client over the service routes. Every method maps to exactly
 * one request; errors are thrown as ApiRequestError carrying the server's
 * error code so callers can branch on it (409 "wrong_state" and friends).
 */
import type {
  ApiErrorBody,
  BindingDoc,
  ChatResponse,
  ChatTurn,
  EventPage,
  GraphDoc,
  InstantiateResponse,
  PrebuiltEntry,
  ReportDoc,
  RunStatusDoc,
  SchemaRegistryDoc,
} from "./types.js";

export class ApiRequestError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
    public readonly body: unknown = undefined,
  ) {
    super(message);
    this.name = "ApiRequestError";
  }
}

type FetchLike = typeof fetch;

export class ApiClient {
  private readonly base: string;
  private readonly token: string | null;
  private readonly fetchImpl: FetchLike;

  constructor(base: string, options: { token?: string; fetchImpl?: FetchLike } = {}) {
    this.base = base.replace(/\/+$/, "");
    this.token = options.token ?? null;
    this.fetchImpl = options.fetchImpl ?? fetch.bind(globalThis);
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["content-type"] = "application/json";
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    const response = await this.fetchImpl(this.base + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    let parsed: unknown = null;
    try {
      parsed = text ? JSON.parse(text) : null;
    } catch {
      parsed = text;
    }
    if (!response.ok) {
      const err = (parsed as ApiErrorBody | null)?.error;
      throw new ApiRequestError(
        response.status,
        err?.code ?? "http_error",
        err?.message ?? `${method} ${path} failed with ${response.status}`,
        parsed,
      );
    }
    return parsed as T;
  }

  healthz(): Promise<{ ok: boolean }> {
    return this.request("GET", "/healthz");
  }

  schemas(): Promise<SchemaRegistryDoc> {
    return this.request("GET", "/schemas");
  }

  // -- graphs --------------------------------------------------------------

  listGraphs(): Promise<{ graphs: string[] }> {
    return this.request("GET", "/graphs");
  }

  getGraph(name: string): Promise<GraphDoc> {
    return this.request("GET", `/graphs/${encodeURIComponent(name)}`);
  }

  createGraph(doc: GraphDoc): Promise<{ name: string }> {
    return this.request("POST", "/graphs", doc);
  }

  // -- prebuilt ------------------------------------------------------------

  listPrebuilt(): Promise<{ prebuilt: PrebuiltEntry[] }> {
    return this.request("GET", "/prebuilt");
  }

  instantiatePrebuilt(id: string): Promise<InstantiateResponse> {
    return this.request("POST", `/prebuilt/${encodeURIComponent(id)}/instantiate`);
  }

  // -- runs ----------------------------------------------------------------

  startRun(graph: string, bindings: Record<string, BindingDoc>): Promise<{ run_id: string }> {
    return this.request("POST", "/runs", { graph, bindings });
  }

  listRuns(): Promise<{ runs: RunStatusDoc[] }> {
    return this.request("GET", "/runs");
  }

  runStatus(runId: string): Promise<RunStatusDoc> {
    return this.request("GET", `/runs/${encodeURIComponent(runId)}`);
  }

  events(runId: string, since: number): Promise<EventPage> {
    return this.request("GET", `/runs/${encodeURIComponent(runId)}/events?since=${since}`);
  }

  postApproval(
    runId: string,
    flag: { approved: boolean; reviewer: string; comment?: string },
  ): Promise<RunStatusDoc> {
    return this.request("POST", `/runs/${encodeURIComponent(runId)}/approval`, flag);
  }

  report(runId: string): Promise<ReportDoc> {
    return this.request("GET", `/runs/${encodeURIComponent(runId)}/report`);
  }

  reportUrl(runId: string): string {
    return `${this.base}/runs/${encodeURIComponent(runId)}/report`;
  }

  // -- chat ----------------------------------------------------------------

  chat(agentId: string, message: string, history: ChatTurn[]): Promise<ChatResponse> {
    return this.request("POST", "/chat", { agent_id: agentId, message, history });
  }
}
