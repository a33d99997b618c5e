/**
 * Approval dialog. Opens when a run parks at a human-approval gate and
 * shows the reviewer exactly what is exposed at the gate: procedural-flow
 * objects as a numbered step list, anything else (retrieval snippets,
 * evidence blobs) as labeled preformatted payloads.
 *
 * Reviewer name is mandatory; the decision buttons stay disabled without
 * it. Comments are optional. A 409 from the server means someone else got
 * there first, which the dialog reports instead of treating as a failure.
 */
import { ApiRequestError, type ApiClient } from "./api.js";
import type { ExposedObject, PendingApproval } from "./types.js";

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

function renderFlow(obj: ExposedObject): HTMLElement {
  const box = el("div", "flow-object");
  const testId = String(obj.payload["test_id"] ?? "");
  box.append(el("h3", "flow-title", `Procedural flow: ${testId}`));
  const steps = Array.isArray(obj.payload["steps"]) ? obj.payload["steps"] : [];
  const list = el("ol", "flow-steps");
  for (const raw of steps) {
    const step = raw as Record<string, unknown>;
    const li = el("li", "flow-step");
    const head = [String(step["protocol"] ?? ""), String(step["name"] ?? "")];
    if (step["direction"]) head.push(`(${String(step["direction"])})`);
    li.append(el("span", "step-head", head.join(" ")));
    if (step["description"]) {
      li.append(el("span", "step-desc", ` ${String(step["description"])}`));
    }
    list.append(li);
  }
  box.append(list);
  return box;
}

function renderEvidence(obj: ExposedObject): HTMLElement {
  const box = el("div", "evidence-object");
  box.append(el("h3", "evidence-title", `${obj.schema} ${obj.hash.slice(0, 12)}`));
  const pre = el("pre", "evidence-body");
  if (obj.schema === "text-blob" && typeof obj.payload["text"] === "string") {
    pre.textContent = obj.payload["text"];
  } else {
    pre.textContent = JSON.stringify(obj.payload, null, 2);
  }
  box.append(pre);
  return box;
}

export class ApprovalDialog {
  readonly root: HTMLDialogElement;
  private api: ApiClient;
  private runId: string;
  private pending: PendingApproval;
  private onDecided: () => void;

  private reviewerInput: HTMLInputElement;
  private commentInput: HTMLTextAreaElement;
  private approveBtn: HTMLButtonElement;
  private rejectBtn: HTMLButtonElement;
  private message: HTMLElement;

  constructor(api: ApiClient, runId: string, pending: PendingApproval, onDecided: () => void) {
    this.api = api;
    this.runId = runId;
    this.pending = pending;
    this.onDecided = onDecided;

    this.root = document.createElement("dialog");
    this.root.className = "approval-dialog";
    this.root.append(el("h2", undefined, `Approval required: ${pending.node_id}`));

    const objects = el("div", "approval-objects");
    for (const obj of pending.objects) {
      objects.append(obj.schema === "procedural-flow" ? renderFlow(obj) : renderEvidence(obj));
    }
    if (pending.objects.length === 0) {
      // Older servers expose hashes only; show them rather than nothing.
      for (const hash of pending.exposed) {
        objects.append(el("div", "evidence-object", hash));
      }
    }
    this.root.append(objects);

    this.reviewerInput = el("input");
    this.reviewerInput.type = "text";
    this.reviewerInput.placeholder = "your name";
    this.reviewerInput.className = "reviewer-input";
    this.reviewerInput.addEventListener("input", () => this.syncButtons());

    this.commentInput = el("textarea");
    this.commentInput.placeholder = "comment (optional)";
    this.commentInput.className = "comment-input";
    this.commentInput.rows = 2;

    const reviewerRow = el("label", "field-row");
    reviewerRow.append(el("span", "field-label", "reviewer"), this.reviewerInput);
    const commentRow = el("label", "field-row");
    commentRow.append(el("span", "field-label", "comment"), this.commentInput);
    this.root.append(reviewerRow, commentRow);

    this.message = el("div", "approval-message");
    this.root.append(this.message);

    this.approveBtn = el("button", "approve", "Approve");
    this.rejectBtn = el("button", "reject", "Reject");
    this.approveBtn.disabled = true;
    this.rejectBtn.disabled = true;
    this.approveBtn.addEventListener("click", () => void this.decide(true));
    this.rejectBtn.addEventListener("click", () => void this.decide(false));
    const buttons = el("div", "approval-buttons");
    buttons.append(this.approveBtn, this.rejectBtn);
    this.root.append(buttons);
  }

  open(): void {
    document.body.append(this.root);
    // jsdom has no showModal; fall back to the open attribute there.
    if (typeof this.root.showModal === "function") this.root.showModal();
    else this.root.setAttribute("open", "");
  }

  close(): void {
    if (typeof this.root.close === "function") this.root.close();
    this.root.remove();
  }

  private syncButtons(): void {
    const ready = this.reviewerInput.value.trim().length > 0;
    this.approveBtn.disabled = !ready;
    this.rejectBtn.disabled = !ready;
  }

  async decide(approved: boolean): Promise<void> {
    const reviewer = this.reviewerInput.value.trim();
    if (!reviewer) return;
    this.approveBtn.disabled = true;
    this.rejectBtn.disabled = true;
    try {
      await this.api.postApproval(this.runId, {
        approved,
        reviewer,
        comment: this.commentInput.value.trim(),
      });
      this.close();
      this.onDecided();
    } catch (err) {
      if (err instanceof ApiRequestError && err.status === 409) {
        this.message.textContent = "already decided";
        const dismiss = el("button", undefined, "Close");
        dismiss.addEventListener("click", () => {
          this.close();
          this.onDecided();
        });
        this.approveBtn.replaceWith(dismiss);
        this.rejectBtn.remove();
        return;
      }
      this.message.textContent = err instanceof Error ? err.message : String(err);
      this.syncButtons();
    }
  }
}
