import { describe, expect, it } from "vitest";

import {
  applyEvent,
  applyRequestsSnapshot,
  clearInflight,
  effectiveDecision,
  initialState,
  markInflight,
  pendingRequests,
  secondsLeft,
  settledRequests,
  subjectOf,
} from "../src/state.js";
import type { ApprovalRequest } from "../src/types.js";

const NOW = 1_700_000_000;

function req(overrides: Partial<ApprovalRequest> = {}): ApprovalRequest {
  return {
    request_id: "r1",
    kind: "decrypt",
    tag: "00".repeat(16),
    filename: "docs/a.txt",
    requested_at: NOW,
    expires_at: NOW + 120,
    decision: "pending",
    decided_at: null,
    ...overrides,
  };
}

describe("request lifecycle", () => {
  it("a pushed request becomes pending", () => {
    const state = applyEvent(initialState(), "request", req());
    expect(pendingRequests(state, NOW).map((r) => r.request_id)).toEqual([
      "r1",
    ]);
  });

  it("a decision event settles it and clears inflight", () => {
    let state = applyEvent(initialState(), "request", req());
    state = markInflight(state, "r1");
    state = applyEvent(state, "decision", req({ decision: "denied" }));
    expect(pendingRequests(state, NOW)).toEqual([]);
    expect(settledRequests(state, NOW)[0].decision).toBe("denied");
    expect(state.inflight.has("r1")).toBe(false);
  });

  it("snapshots merge by id instead of duplicating", () => {
    let state = applyEvent(initialState(), "request", req());
    state = applyRequestsSnapshot(state, [req({ decision: "approved" })]);
    expect(state.requests.size).toBe(1);
    expect(state.requests.get("r1")!.decision).toBe("approved");
  });

  it("state transitions never mutate the previous state", () => {
    const before = initialState();
    applyEvent(before, "request", req());
    markInflight(before, "r1");
    expect(before.requests.size).toBe(0);
    expect(before.inflight.size).toBe(0);
  });
});

describe("expiry", () => {
  it("a stale pending request renders as expired", () => {
    const r = req();
    expect(effectiveDecision(r, NOW + 121)).toBe("expired");
    expect(effectiveDecision(r, NOW + 10)).toBe("pending");
  });

  it("expired requests leave the pending list", () => {
    const state = applyEvent(initialState(), "request", req());
    expect(pendingRequests(state, NOW + 500)).toEqual([]);
    expect(settledRequests(state, NOW + 500)).toHaveLength(1);
  });

  it("countdown floors at zero", () => {
    expect(secondsLeft(req(), NOW + 119.5)).toBe(1);
    expect(secondsLeft(req(), NOW + 9999)).toBe(0);
  });
});

describe("display subject", () => {
  it("prefers the resolved filename", () => {
    expect(subjectOf(req())).toBe("docs/a.txt");
  });

  it("falls back to the tag hex when unresolvable", () => {
    expect(subjectOf(req({ filename: null }))).toBe("00".repeat(16));
  });
});

describe("double-click safety", () => {
  it("inflight marking is per request and reversible", () => {
    let state = markInflight(initialState(), "r1");
    expect(state.inflight.has("r1")).toBe(true);
    state = clearInflight(state, "r1");
    expect(state.inflight.has("r1")).toBe(false);
  });
});
