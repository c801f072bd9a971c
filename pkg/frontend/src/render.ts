// DOM rendering: the whole view is re-derived from state on every change.

import {
  effectiveDecision,
  pendingRequests,
  secondsLeft,
  settledRequests,
  subjectOf,
} from "./state.js";
import type { ApprovalRequest, ConsoleState } from "./types.js";

export interface Actions {
  decide(requestId: string, approve: boolean): void;
}

function el(
  tag: string,
  className: string,
  text?: string,
): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function requestCard(
  req: ApprovalRequest,
  now: number,
  state: ConsoleState,
  actions: Actions,
): HTMLElement {
  const decision = effectiveDecision(req, now);
  // migration prompts share the queue but carry their own visual class
  const card = el(
    "div",
    `card kind-${req.kind} decision-${decision}`,
  );
  card.dataset.requestId = req.request_id;
  const label =
    req.kind === "migrate-auth" ? "device replacement" : "decrypt";
  card.appendChild(el("div", "card-kind", label));
  card.appendChild(el("div", "card-subject", subjectOf(req)));
  card.appendChild(el("div", "card-tag", `tag ${req.tag}`));
  card.appendChild(
    el(
      "div",
      "card-time",
      `requested ${new Date(req.requested_at * 1000).toLocaleTimeString()}`,
    ),
  );
  if (decision === "pending") {
    card.appendChild(
      el("div", "card-countdown", `expires in ${secondsLeft(req, now)}s`),
    );
    const buttons = el("div", "card-actions");
    const busy = state.inflight.has(req.request_id);
    for (const [text, approve] of [
      ["Approve", true],
      ["Deny", false],
    ] as const) {
      const button = el("button", approve ? "approve" : "deny", text);
      (button as HTMLButtonElement).disabled = busy;
      button.addEventListener("click", () =>
        actions.decide(req.request_id, approve),
      );
      buttons.appendChild(button);
    }
    card.appendChild(buttons);
  } else {
    card.appendChild(el("div", "card-decision", decision));
  }
  return card;
}

export function render(
  root: HTMLElement,
  state: ConsoleState,
  actions: Actions,
  nowSeconds = Date.now() / 1000,
): void {
  root.textContent = "";

  if (state.connection === "lost") {
    root.appendChild(
      el("div", "banner lost", "connection to the device lost; retrying"),
    );
  }
  if (state.toast) {
    root.appendChild(el("div", "toast", state.toast));
  }

  const pendingBox = el("section", "pending");
  pendingBox.appendChild(el("h2", "", "Waiting for you"));
  const pending = pendingRequests(state, nowSeconds);
  if (pending.length === 0) {
    pendingBox.appendChild(el("p", "empty", "Nothing to approve."));
  }
  for (const req of pending) {
    pendingBox.appendChild(requestCard(req, nowSeconds, state, actions));
  }
  root.appendChild(pendingBox);

  const historyBox = el("section", "history");
  historyBox.appendChild(el("h2", "", "Recently decided"));
  for (const req of settledRequests(state, nowSeconds).slice(0, 20)) {
    historyBox.appendChild(requestCard(req, nowSeconds, state, actions));
  }
  root.appendChild(historyBox);

  const auditBox = el("section", "audit");
  auditBox.appendChild(el("h2", "", "Audit log"));
  const list = el("ul", "audit-list");
  for (const note of [...state.notifications].reverse().slice(0, 50)) {
    const when = new Date(note.at * 1000).toLocaleString();
    list.appendChild(
      el(
        "li",
        `audit-${note.outcome}`,
        `${when} — ${note.kind} of ${note.filename ?? note.tag}: ${note.outcome}`,
      ),
    );
  }
  auditBox.appendChild(list);
  root.appendChild(auditBox);
}
