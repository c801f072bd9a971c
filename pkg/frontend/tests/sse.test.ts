import { describe, expect, it, vi } from "vitest";

import { subscribeEvents, type EventSourceLike } from "../src/sse.js";

class FakeSource implements EventSourceLike {
  listeners = new Map<string, (ev: { data: string }) => void>();
  onerror: ((ev: unknown) => void) | null = null;
  onopen: ((ev: unknown) => void) | null = null;
  closed = false;

  addEventListener(name: string, handler: (ev: { data: string }) => void) {
    this.listeners.set(name, handler);
  }

  close() {
    this.closed = true;
  }

  push(name: string, payload: unknown) {
    this.listeners.get(name)?.({ data: JSON.stringify(payload) });
  }
}

describe("subscribeEvents", () => {
  it("parses and forwards named events", () => {
    const sources: FakeSource[] = [];
    const events: [string, unknown][] = [];
    subscribeEvents(
      "http://x/events",
      {
        onEvent: (name, payload) => events.push([name, payload]),
        onStatus: () => {},
      },
      () => {
        const s = new FakeSource();
        sources.push(s);
        return s;
      },
    );
    sources[0].onopen?.({});
    sources[0].push("request", { request_id: "r1" });
    sources[0].push("decision", { request_id: "r1", decision: "approved" });
    expect(events).toEqual([
      ["request", { request_id: "r1" }],
      ["decision", { request_id: "r1", decision: "approved" }],
    ]);
  });

  it("reconnects after an error and reports status", async () => {
    vi.useFakeTimers();
    const sources: FakeSource[] = [];
    const statuses: string[] = [];
    subscribeEvents(
      "http://x/events",
      {
        onEvent: () => {},
        onStatus: (s) => statuses.push(s),
      },
      () => {
        const s = new FakeSource();
        sources.push(s);
        return s;
      },
      100,
    );
    sources[0].onopen?.({});
    sources[0].onerror?.({});
    expect(statuses).toEqual(["connecting", "live", "lost"]);
    expect(sources[0].closed).toBe(true);
    await vi.advanceTimersByTimeAsync(150);
    expect(sources).toHaveLength(2);
    vi.useRealTimers();
  });

  it("the unsubscribe handle closes the stream and stops reconnects", async () => {
    vi.useFakeTimers();
    const sources: FakeSource[] = [];
    const stop = subscribeEvents(
      "http://x/events",
      { onEvent: () => {}, onStatus: () => {} },
      () => {
        const s = new FakeSource();
        sources.push(s);
        return s;
      },
      100,
    );
    stop();
    expect(sources[0].closed).toBe(true);
    sources[0].onerror?.({});
    await vi.advanceTimersByTimeAsync(500);
    expect(sources).toHaveLength(1);
    vi.useRealTimers();
  });
});
