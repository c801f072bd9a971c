export type Decision = "pending" | "approved" | "denied" | "expired";

export interface ApprovalRequest {
  request_id: string;
  kind: "decrypt" | "migrate-auth";
  tag: string;
  filename: string | null;
  requested_at: number;
  expires_at: number;
  decision: Decision;
  decided_at: number | null;
}

export interface AuditNotification {
  notification_id: string;
  kind: string;
  tag: string;
  filename: string | null;
  at: number;
  outcome: string;
}

export type ConnectionStatus = "connecting" | "live" | "lost";

export interface ConsoleState {
  requests: Map<string, ApprovalRequest>;
  notifications: AuditNotification[];
  connection: ConnectionStatus;
  toast: string | null;
  /** decision posts currently in flight; the UI disables their buttons */
  inflight: Set<string>;
}
