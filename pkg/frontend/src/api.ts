// The console is a read/decide surface only: list requests, post one
// decision, read the audit log. It can never start derivations,
// enrollments, or recoveries.

import type { ApprovalRequest, AuditNotification } from "./types.js";

export type FetchLike = (
  url: string,
  init?: {
    method?: string;
    headers?: Record<string, string>;
    body?: string;
  },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export class AlreadyDecidedError extends Error {}
export class ConsoleApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ConsoleApi {
  constructor(
    private baseUrl: string,
    private token: string,
    private fetchImpl: FetchLike = fetch as unknown as FetchLike,
  ) {}

  private headers(): Record<string, string> {
    return {
      "Content-Type": "application/json",
      "X-Console-Token": this.token,
    };
  }

  async getRequests(): Promise<ApprovalRequest[]> {
    const resp = await this.fetchImpl(`${this.baseUrl}/requests`, {
      headers: this.headers(),
    });
    if (resp.status !== 200) {
      throw new ConsoleApiError(resp.status, "could not list requests");
    }
    const body = (await resp.json()) as { requests: ApprovalRequest[] };
    return body.requests;
  }

  async getNotifications(): Promise<AuditNotification[]> {
    const resp = await this.fetchImpl(`${this.baseUrl}/notifications`, {
      headers: this.headers(),
    });
    if (resp.status !== 200) {
      throw new ConsoleApiError(resp.status, "could not read audit log");
    }
    const body = (await resp.json()) as {
      notifications: AuditNotification[];
    };
    return body.notifications;
  }

  /** Post one decision. Safe to call twice: a repeat becomes
   * AlreadyDecidedError, which callers surface as a toast, not a failure. */
  async decide(requestId: string, approve: boolean): Promise<void> {
    const resp = await this.fetchImpl(
      `${this.baseUrl}/requests/${requestId}/decision`,
      {
        method: "POST",
        headers: this.headers(),
        body: JSON.stringify({ decision: approve ? "approve" : "deny" }),
      },
    );
    if (resp.status === 409) {
      throw new AlreadyDecidedError("request was already decided");
    }
    if (resp.status !== 200) {
      throw new ConsoleApiError(resp.status, "decision was not accepted");
    }
  }

  eventsUrl(): string {
    return `${this.baseUrl}/events?token=${encodeURIComponent(this.token)}`;
  }
}
