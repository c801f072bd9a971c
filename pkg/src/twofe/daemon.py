"""The secondary-device daemon: answers the primary over TCP, polls the
cloud for replacement pings, and serves the loopback console API that the
browser console consumes.

Console API (HTTP+JSON on loopback):

    GET  /requests                    pending approval requests
    POST /requests/{id}/decision      {"decision": "approve"|"deny"}
    GET  /notifications               the audit log
    GET  /events                      server-push stream (SSE) of new
                                      requests, decisions, notifications
    POST /admin/claim                 {case_id, claim_secret} during this
                                      device's own onboarding as replacement
    GET  /                            the console app (frontend/dist), gated
                                      by the pairing token on first visit

All endpoints other than / and /events require the X-Console-Token header
(or ?token=) matching the daemon's pairing token, printed at startup.
"""

from __future__ import annotations

import json
import mimetypes
import os
import queue
import secrets
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .engine import SecondaryDevice
from .errors import TwofeError
from .transport import ChannelServer, TcpChannel


class SecondaryDaemon:
    def __init__(self, device: SecondaryDevice, listen_host: str = "127.0.0.1",
                 listen_port: int = 0, console_host: str = "127.0.0.1",
                 console_port: int = 0, static_dir: Optional[str] = None,
                 ping_interval: float = 1.0,
                 console_token: Optional[str] = None):
        self.device = device
        self.ping_interval = ping_interval
        self.static_dir = static_dir
        self.console_token = console_token or secrets.token_hex(16)
        self._stop = threading.Event()
        self._servers: list[ChannelServer] = []

        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((listen_host, listen_port))
        self._listener.listen(4)
        self.listen_port = self._listener.getsockname()[1]

        handler = self._make_console_handler()
        self._console = ThreadingHTTPServer((console_host, console_port),
                                            handler)
        self.console_port = self._console.server_address[1]
        self._threads: list[threading.Thread] = []

    # -- lifecycle ---------------------------------------------------------------

    def start(self) -> None:
        for target in (self._accept_loop, self._ping_loop,
                       self._console.serve_forever):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        self._console.shutdown()
        for srv in self._servers:
            srv.stop()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _addr = self._listener.accept()
            except OSError:
                return
            server = ChannelServer(TcpChannel(conn), self.device.handle,
                                   self.device.log, device=self.device)
            server.start()
            self._servers.append(server)

    def _ping_loop(self) -> None:
        while not self._stop.is_set():
            try:
                self.device.poll_and_prompt()
            except TwofeError:
                pass
            except Exception:
                pass
            self._stop.wait(self.ping_interval)

    # -- console -----------------------------------------------------------------

    def _make_console_handler(self):
        daemon = self

        class ConsoleHandler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _reply(self, status: int, payload, content_type="application/json"):
                data = payload if isinstance(payload, bytes) \
                    else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def _authorized(self) -> bool:
                from urllib.parse import parse_qs, urlparse

                token = self.headers.get("X-Console-Token", "")
                if not token:
                    token = parse_qs(urlparse(self.path).query).get(
                        "token", [""])[0]
                return secrets.compare_digest(token, daemon.console_token)

            def do_GET(self):
                from urllib.parse import urlparse

                path = urlparse(self.path).path
                if path in ("/requests", "/notifications", "/events"):
                    if not self._authorized():
                        return self._reply(403, {"error": "forbidden",
                                                 "detail": "bad console token"})
                    if path == "/requests":
                        return self._reply(200, {
                            "requests": daemon.device.approvals.all_requests(),
                            "pending": daemon.device.approvals.pending()})
                    if path == "/notifications":
                        return self._reply(200, {
                            "notifications":
                                daemon.device.approvals.audit_log()})
                    return self._serve_events()
                return self._serve_static(path)

            def do_POST(self):
                from urllib.parse import urlparse

                if not self._authorized():
                    return self._reply(403, {"error": "forbidden",
                                             "detail": "bad console token"})
                path = urlparse(self.path).path
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length)) if length else {}
                parts = path.strip("/").split("/")
                if len(parts) == 3 and parts[0] == "requests" \
                        and parts[2] == "decision":
                    decision = body.get("decision")
                    if decision not in ("approve", "deny"):
                        return self._reply(400, {"error": "invalid-encoding",
                                                 "detail": "bad decision"})
                    try:
                        daemon.device.approvals.decide(parts[1],
                                                       decision == "approve")
                    except TwofeError as exc:
                        return self._reply(409, {"error": exc.code,
                                                 "detail": str(exc)})
                    return self._reply(200, {"ok": True})
                if path == "/admin/claim":
                    try:
                        daemon.device.claim_recovered_share(
                            body["case_id"],
                            bytes.fromhex(body["claim_secret"]))
                    except TwofeError as exc:
                        return self._reply(400, {"error": exc.code,
                                                 "detail": str(exc)})
                    return self._reply(200, {"ok": True})
                return self._reply(404, {"error": "not-found", "detail": path})

            def _serve_static(self, path: str) -> None:
                if daemon.static_dir is None:
                    return self._reply(200, {"console": "not bundled",
                                             "api": ["/requests",
                                                     "/notifications",
                                                     "/events"]})
                rel = "index.html" if path == "/" else path.lstrip("/")
                root = os.path.abspath(daemon.static_dir)
                full = os.path.abspath(os.path.join(root, rel))
                if not full.startswith(root + os.sep) or not os.path.isfile(full):
                    return self._reply(404, {"error": "not-found",
                                             "detail": rel})
                ctype = mimetypes.guess_type(full)[0] or "text/plain"
                with open(full, "rb") as fh:
                    self._reply(200, fh.read(), content_type=ctype)

            def _serve_events(self) -> None:
                sub = daemon.device.approvals.subscribe()
                try:
                    self.send_response(200)
                    self.send_header("Content-Type", "text/event-stream")
                    self.send_header("Cache-Control", "no-cache")
                    self.end_headers()
                    self.wfile.write(b": connected\n\n")
                    self.wfile.flush()
                    while not daemon._stop.is_set():
                        try:
                            event = sub.get(timeout=1.0)
                        except queue.Empty:
                            self.wfile.write(b": keepalive\n\n")
                            self.wfile.flush()
                            continue
                        name = event.pop("event")
                        payload = json.dumps(event)
                        self.wfile.write(
                            f"event: {name}\ndata: {payload}\n\n".encode())
                        self.wfile.flush()
                except (BrokenPipeError, ConnectionResetError):
                    pass
                finally:
                    daemon.device.approvals.unsubscribe(sub)

        return ConsoleHandler
