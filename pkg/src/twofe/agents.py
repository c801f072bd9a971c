"""Approval policies, the pending-request queue on the helper device, and
the notification audit log the console renders.

Decryption and replacement-authorization requests flow through here.  In
prompt mode nothing proceeds without an explicit approve event; in notify
mode the operation proceeds but leaves a durable audit record; auto mode is
silent.  Per-folder overrides pick the mode by filename prefix, and a
configurable approval window lets repeat decryptions of the same file skip
re-prompting.
"""

from __future__ import annotations

import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import AlreadyDecided, UnknownRequest

MODE_AUTO = "auto"
MODE_NOTIFY = "notify"
MODE_PROMPT = "prompt"
MODES = (MODE_AUTO, MODE_NOTIFY, MODE_PROMPT)

KIND_DECRYPT = "decrypt"
KIND_MIGRATE_AUTH = "migrate-auth"

PENDING = "pending"
APPROVED = "approved"
DENIED = "denied"
EXPIRED = "expired"

REQUEST_EXPIRY = 120.0
NOTIFICATION_RETENTION = 90 * 24 * 3600.0


@dataclass
class ApprovalPolicy:
    mode: str = MODE_NOTIFY
    folder_overrides: dict[str, str] = field(default_factory=dict)
    approval_window: float = 30.0

    def resolve(self, filename: Optional[str]) -> str:
        if filename:
            best = ""
            for prefix in self.folder_overrides:
                if filename.startswith(prefix) and len(prefix) > len(best):
                    best = prefix
            if best:
                return self.folder_overrides[best]
        return self.mode


@dataclass
class PendingRequest:
    request_id: str
    kind: str
    tag: bytes
    filename: Optional[str]
    requested_at: float
    decision: str = PENDING
    decided_at: Optional[float] = None

    def expires_at(self) -> float:
        return self.requested_at + REQUEST_EXPIRY

    def to_dict(self) -> dict:
        return {
            "request_id": self.request_id,
            "kind": self.kind,
            "tag": self.tag.hex(),
            "filename": self.filename,
            "requested_at": self.requested_at,
            "expires_at": self.expires_at(),
            "decision": self.decision,
            "decided_at": self.decided_at,
        }


@dataclass
class Notification:
    notification_id: str
    kind: str
    tag: bytes
    filename: Optional[str]
    at: float
    outcome: str    # auto-window, notify, approved, denied, expired

    def to_dict(self) -> dict:
        return {
            "notification_id": self.notification_id,
            "kind": self.kind,
            "tag": self.tag.hex(),
            "filename": self.filename,
            "at": self.at,
            "outcome": self.outcome,
        }


class ApprovalQueue:
    """Serializes decisions; derivation workers block per request until the
    user (or a programmatic decider in tests) settles it."""

    def __init__(self, policy: Optional[ApprovalPolicy] = None,
                 clock: Callable[[], float] = time.time):
        self.policy = policy or ApprovalPolicy()
        self.clock = clock
        self.requests: dict[str, PendingRequest] = {}
        self.notifications: list[Notification] = []
        self._events: dict[str, threading.Event] = {}
        self._window: dict[bytes, float] = {}
        self._lock = threading.Lock()
        self._subscribers: list[queue.Queue] = []
        # When set, prompts resolve synchronously through this callable
        # instead of blocking on a console decision.
        self.decider: Optional[Callable[[PendingRequest], bool]] = None

    # -- events ----------------------------------------------------------------

    def subscribe(self) -> "queue.Queue[dict]":
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: "queue.Queue[dict]") -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def _emit(self, event: str, payload: dict) -> None:
        for q in list(self._subscribers):
            q.put({"event": event, **payload})

    # -- audit -------------------------------------------------------------------

    def _notify(self, kind: str, tag: bytes, filename: Optional[str],
                outcome: str) -> None:
        now = self.clock()
        keep_after = now - NOTIFICATION_RETENTION
        self.notifications = [n for n in self.notifications if n.at >= keep_after]
        note = Notification(notification_id=uuid.uuid4().hex, kind=kind,
                            tag=tag, filename=filename, at=now, outcome=outcome)
        self.notifications.append(note)
        self._emit("notification", note.to_dict())

    def audit_log(self) -> list[dict]:
        keep_after = self.clock() - NOTIFICATION_RETENTION
        return [n.to_dict() for n in self.notifications if n.at >= keep_after]

    # -- the gate ---------------------------------------------------------------

    def admit(self, kind: str, tag: bytes, filename: Optional[str],
              wait_timeout: Optional[float] = None) -> bool:
        """Returns True when the operation may proceed under the policy."""
        mode = self.policy.resolve(filename)
        if kind == KIND_DECRYPT and mode == MODE_AUTO:
            return True
        if kind == KIND_DECRYPT and mode == MODE_NOTIFY:
            self._notify(kind, tag, filename, "notify")
            return True
        if kind == KIND_MIGRATE_AUTH and mode != MODE_PROMPT:
            # device replacement rides the same policy switch; silent modes
            # approve so headless suites run, with an audit record
            self._notify(kind, tag, filename, mode)
            return True

        now = self.clock()
        window = self.policy.approval_window
        if kind == KIND_DECRYPT and window > 0:
            approved_at = self._window.get(tag)
            if approved_at is not None and now - approved_at < window:
                self._notify(kind, tag, filename, "auto-window")
                return True

        req = PendingRequest(request_id=uuid.uuid4().hex, kind=kind, tag=tag,
                             filename=filename, requested_at=now)
        event = threading.Event()
        with self._lock:
            self.requests[req.request_id] = req
            self._events[req.request_id] = event
        self._emit("request", req.to_dict())

        if self.decider is not None:
            try:
                verdict = bool(self.decider(req))
            except Exception:
                verdict = False
            try:
                self.decide(req.request_id, verdict)
            except AlreadyDecided:
                pass
        else:
            budget = REQUEST_EXPIRY if wait_timeout is None \
                else min(wait_timeout, REQUEST_EXPIRY)
            event.wait(timeout=budget)

        with self._lock:
            self.sweep_expired()
            final = self.requests[req.request_id]
            if final.decision == PENDING:
                final.decision = EXPIRED
                final.decided_at = self.clock()
                self._emit("decision", final.to_dict())
        if final.decision == APPROVED:
            if kind == KIND_DECRYPT:
                self._window[tag] = self.clock()
            self._notify(kind, tag, filename, "approved")
            return True
        self._notify(kind, tag, filename, final.decision)
        return False

    def decide(self, request_id: str, approve: bool) -> None:
        with self._lock:
            req = self.requests.get(request_id)
            if req is None:
                raise UnknownRequest(request_id)
            self.sweep_expired()
            if req.decision != PENDING:
                raise AlreadyDecided(req.decision)
            req.decision = APPROVED if approve else DENIED
            req.decided_at = self.clock()
            event = self._events.pop(request_id, None)
        self._emit("decision", req.to_dict())
        if event:
            event.set()

    def sweep_expired(self) -> None:
        now = self.clock()
        for req in self.requests.values():
            if req.decision == PENDING and now > req.expires_at():
                req.decision = EXPIRED
                req.decided_at = now
                event = self._events.pop(req.request_id, None)
                if event:
                    event.set()
                self._emit("decision", req.to_dict())

    def pending(self) -> list[dict]:
        with self._lock:
            self.sweep_expired()
            return [r.to_dict() for r in self.requests.values()
                    if r.decision == PENDING]

    def all_requests(self) -> list[dict]:
        with self._lock:
            self.sweep_expired()
            return [r.to_dict() for r in self.requests.values()]
