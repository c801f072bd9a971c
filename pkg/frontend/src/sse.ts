// Server-push subscription with automatic reconnect. The EventSource
// constructor is injected so tests can drive the stream directly.

export interface EventSourceLike {
  addEventListener(name: string, handler: (ev: { data: string }) => void): void;
  close(): void;
  // `any` so both the browser EventSource and test fakes assign cleanly
  onerror: ((ev: any) => void) | null;
  onopen: ((ev: any) => void) | null;
}

export type EventSourceFactory = (url: string) => EventSourceLike;

export interface StreamHandlers {
  onEvent(name: string, payload: unknown): void;
  onStatus(status: "connecting" | "live" | "lost"): void;
}

const EVENT_NAMES = ["request", "decision", "notification"];

export function subscribeEvents(
  url: string,
  handlers: StreamHandlers,
  factory: EventSourceFactory,
  reconnectDelayMs = 1500,
): () => void {
  let source: EventSourceLike | null = null;
  let closed = false;

  const connect = () => {
    if (closed) return;
    handlers.onStatus("connecting");
    source = factory(url);
    source.onopen = () => handlers.onStatus("live");
    source.onerror = () => {
      handlers.onStatus("lost");
      try {
        source?.close();
      } catch {
        /* already closed */
      }
      setTimeout(connect, reconnectDelayMs);
    };
    for (const name of EVENT_NAMES) {
      source.addEventListener(name, (ev) => {
        try {
          handlers.onEvent(name, JSON.parse(ev.data));
        } catch {
          /* skip malformed frames */
        }
      });
    }
  };

  connect();
  return () => {
    closed = true;
    try {
      source?.close();
    } catch {
      /* already closed */
    }
  };
}
