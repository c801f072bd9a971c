// Bootstrap: pick up the pairing token (query parameter on first visit,
// session storage afterwards), connect the event stream, poll as fallback,
// and re-render on every state change.

import { AlreadyDecidedError, ConsoleApi } from "./api.js";
import { render } from "./render.js";
import {
  applyEvent,
  applyNotificationsSnapshot,
  applyRequestsSnapshot,
  clearInflight,
  initialState,
  markInflight,
  setConnection,
  setToast,
} from "./state.js";
import { subscribeEvents } from "./sse.js";
import type { ConsoleState } from "./types.js";

const TOKEN_KEY = "twofe-console-token";

function resolveToken(): string {
  const params = new URLSearchParams(window.location.search);
  const fromUrl = params.get("token");
  if (fromUrl) {
    sessionStorage.setItem(TOKEN_KEY, fromUrl);
    params.delete("token");
    const query = params.toString();
    history.replaceState(
      null,
      "",
      window.location.pathname + (query ? `?${query}` : ""),
    );
    return fromUrl;
  }
  return sessionStorage.getItem(TOKEN_KEY) ?? "";
}

function start(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const api = new ConsoleApi("", resolveToken());

  let state: ConsoleState = initialState();
  const update = (next: ConsoleState) => {
    state = next;
    render(root, state, actions);
  };

  const actions = {
    decide(requestId: string, approve: boolean) {
      if (state.inflight.has(requestId)) return; // double-click safe
      update(markInflight(state, requestId));
      api
        .decide(requestId, approve)
        .catch((err) => {
          const message =
            err instanceof AlreadyDecidedError
              ? "that request was already decided elsewhere"
              : "the device rejected the decision";
          update(setToast(clearInflight(state, requestId), message));
          setTimeout(() => update(setToast(state, null)), 4000);
        })
        .finally(() => refresh());
    },
  };

  const refresh = () => {
    api
      .getRequests()
      .then((requests) => update(applyRequestsSnapshot(state, requests)))
      .catch(() => update(setConnection(state, "lost")));
    api
      .getNotifications()
      .then((notes) => update(applyNotificationsSnapshot(state, notes)))
      .catch(() => {
        /* the banner already covers it */
      });
  };

  subscribeEvents(
    api.eventsUrl(),
    {
      onEvent(name, payload) {
        update(applyEvent(state, name, payload));
      },
      onStatus(status) {
        update(setConnection(state, status));
        if (status === "live") refresh();
      },
    },
    (url) => new EventSource(url),
  );

  refresh();
  // countdowns tick even without traffic
  setInterval(() => render(root, state, actions), 1000);
}

start();
