/**
 * Per-agent chat panel. Talks to registered agents through POST /chat,
 * sending the running transcript as history so the server stays stateless.
 *
 * Transcripts live in localStorage keyed by agent id, so closing and
 * reopening the panel (or the tab) restores the conversation.
 */
import { ApiRequestError, type ApiClient } from "./api.js";
import type { ChatTurn } from "./types.js";

const STORAGE_PREFIX = "telehub.chat.";

export function loadTranscript(agentId: string): ChatTurn[] {
  try {
    const raw = localStorage.getItem(STORAGE_PREFIX + agentId);
    if (!raw) return [];
    const parsed = JSON.parse(raw);
    return Array.isArray(parsed) ? (parsed as ChatTurn[]) : [];
  } catch {
    return [];
  }
}

export function saveTranscript(agentId: string, turns: ChatTurn[]): void {
  try {
    localStorage.setItem(STORAGE_PREFIX + agentId, JSON.stringify(turns));
  } catch {
    // Storage may be full or unavailable; chat still works, it just
    // will not survive a reload.
  }
}

export class ChatPanel {
  readonly root: HTMLElement;
  private api: ApiClient;
  private agentIds: string[] = [];
  private current = "";
  private turns: ChatTurn[] = [];

  private agentSelect: HTMLSelectElement;
  private transcriptBox: HTMLElement;
  private input: HTMLTextAreaElement;
  private sendBtn: HTMLButtonElement;
  private errorBox: HTMLElement;

  constructor(api: ApiClient) {
    this.api = api;
    this.root = document.createElement("div");
    this.root.className = "chat-panel";

    this.agentSelect = document.createElement("select");
    this.agentSelect.className = "chat-agent";
    this.agentSelect.addEventListener("change", () => this.switchAgent(this.agentSelect.value));

    this.transcriptBox = document.createElement("div");
    this.transcriptBox.className = "chat-transcript";

    this.errorBox = document.createElement("div");
    this.errorBox.className = "chat-error";
    this.errorBox.hidden = true;

    this.input = document.createElement("textarea");
    this.input.className = "chat-input";
    this.input.rows = 2;
    this.input.placeholder = "message";
    this.input.addEventListener("input", () => this.syncSend());

    this.sendBtn = document.createElement("button");
    this.sendBtn.className = "chat-send";
    this.sendBtn.textContent = "Send";
    this.sendBtn.disabled = true;
    this.sendBtn.addEventListener("click", () => void this.send());

    const composer = document.createElement("div");
    composer.className = "chat-composer";
    composer.append(this.input, this.sendBtn);

    this.root.append(this.agentSelect, this.transcriptBox, this.errorBox, composer);
  }

  /** Replace the selectable agents (ids from the canvas draft or catalog). */
  setAgents(ids: string[]): void {
    this.agentIds = Array.from(new Set(ids)).sort();
    this.agentSelect.replaceChildren();
    for (const id of this.agentIds) {
      const opt = document.createElement("option");
      opt.value = id;
      opt.textContent = id;
      this.agentSelect.append(opt);
    }
    const first = this.agentIds[0];
    if (!this.agentIds.includes(this.current)) {
      this.switchAgent(first ?? "");
    }
  }

  switchAgent(agentId: string): void {
    this.current = agentId;
    this.agentSelect.value = agentId;
    this.turns = agentId ? loadTranscript(agentId) : [];
    this.errorBox.hidden = true;
    this.renderTranscript();
    this.syncSend();
  }

  private syncSend(): void {
    this.sendBtn.disabled = this.input.value.trim().length === 0 || this.current === "";
  }

  private renderTranscript(): void {
    this.transcriptBox.replaceChildren();
    for (const turn of this.turns) {
      const line = document.createElement("div");
      line.className = `chat-turn chat-${turn.role}`;
      line.textContent = turn.content;
      this.transcriptBox.append(line);
    }
    this.transcriptBox.scrollTop = this.transcriptBox.scrollHeight;
  }

  async send(): Promise<void> {
    const message = this.input.value.trim();
    if (!message || !this.current) return;
    const agentId = this.current;
    this.sendBtn.disabled = true;
    this.errorBox.hidden = true;
    try {
      const reply = await this.api.chat(agentId, message, this.turns);
      // The agent may have been switched while the request was in flight;
      // append to the transcript the exchange belongs to either way.
      const turns = agentId === this.current ? this.turns : loadTranscript(agentId);
      turns.push({ role: "user", content: message }, { role: "assistant", content: reply.content });
      saveTranscript(agentId, turns);
      if (agentId === this.current) {
        this.input.value = "";
        this.renderTranscript();
      }
    } catch (err) {
      if (err instanceof ApiRequestError && err.code === "unknown_agent") {
        this.errorBox.textContent = `no registered agent ${agentId}; save a graph that uses it first`;
      } else {
        this.errorBox.textContent = err instanceof Error ? err.message : String(err);
      }
      this.errorBox.hidden = false;
    }
    this.syncSend();
  }
}
