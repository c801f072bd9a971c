// UI state is a pure function of the event stream plus API snapshots; the
// renderer never mutates it outside these transitions.

import type {
  ApprovalRequest,
  AuditNotification,
  ConsoleState,
} from "./types.js";

export function initialState(): ConsoleState {
  return {
    requests: new Map(),
    notifications: [],
    connection: "connecting",
    toast: null,
    inflight: new Set(),
  };
}

export function applyRequestsSnapshot(
  state: ConsoleState,
  requests: ApprovalRequest[],
): ConsoleState {
  const merged = new Map(state.requests);
  for (const req of requests) merged.set(req.request_id, req);
  return { ...state, requests: merged };
}

export function applyNotificationsSnapshot(
  state: ConsoleState,
  notifications: AuditNotification[],
): ConsoleState {
  return { ...state, notifications: [...notifications] };
}

/** One SSE event from the daemon: request, decision, or notification. */
export function applyEvent(
  state: ConsoleState,
  name: string,
  payload: unknown,
): ConsoleState {
  if (name === "request" || name === "decision") {
    const req = payload as ApprovalRequest;
    const merged = new Map(state.requests);
    merged.set(req.request_id, req);
    const inflight = new Set(state.inflight);
    if (name === "decision") inflight.delete(req.request_id);
    return { ...state, requests: merged, inflight };
  }
  if (name === "notification") {
    const note = payload as AuditNotification;
    return { ...state, notifications: [...state.notifications, note] };
  }
  return state;
}

export function setConnection(
  state: ConsoleState,
  connection: ConsoleState["connection"],
): ConsoleState {
  return { ...state, connection };
}

export function setToast(state: ConsoleState, toast: string | null): ConsoleState {
  return { ...state, toast };
}

export function markInflight(state: ConsoleState, id: string): ConsoleState {
  const inflight = new Set(state.inflight);
  inflight.add(id);
  return { ...state, inflight };
}

export function clearInflight(state: ConsoleState, id: string): ConsoleState {
  const inflight = new Set(state.inflight);
  inflight.delete(id);
  return { ...state, inflight };
}

/** A request past its expiry renders as expired even before the daemon's
 * own sweep confirms it. */
export function effectiveDecision(
  req: ApprovalRequest,
  nowSeconds: number,
): ApprovalRequest["decision"] {
  if (req.decision === "pending" && nowSeconds > req.expires_at) {
    return "expired";
  }
  return req.decision;
}

export function secondsLeft(req: ApprovalRequest, nowSeconds: number): number {
  return Math.max(0, Math.ceil(req.expires_at - nowSeconds));
}

export function pendingRequests(
  state: ConsoleState,
  nowSeconds: number,
): ApprovalRequest[] {
  return [...state.requests.values()]
    .filter((r) => effectiveDecision(r, nowSeconds) === "pending")
    .sort((a, b) => b.requested_at - a.requested_at);
}

export function settledRequests(
  state: ConsoleState,
  nowSeconds: number,
): ApprovalRequest[] {
  return [...state.requests.values()]
    .filter((r) => effectiveDecision(r, nowSeconds) !== "pending")
    .sort((a, b) => b.requested_at - a.requested_at);
}

/** What the prompt shows as its subject: the filename when the catalog
 * mirror resolved it, otherwise the tag hex. */
export function subjectOf(req: ApprovalRequest): string {
  return req.filename ?? req.tag;
}
