"""HTTP mapping of the cloud API (the documented equivalent of the binary
message schema) and a client with the same surface as the in-process one.

Endpoints (JSON bodies, bytes as hex, blobs as base64):

    POST /enroll              {account_id, password, recovery_secret}
    POST /session             {account_id, password, device_id, role, address} -> {token}
    POST /session/invalidate  {token, target_device_id}
    GET  /session/pings       ?token= -> {pings: [...]}
    POST /session/respond     {token, case_id, approved, binding}
    POST /file                {token, record_b64}
    GET  /file                ?token=&tag= -> {record_b64}
    POST /file/delete         {token, tag}
    POST /file/undelete       {token, tag}
    GET  /file/list           ?token= -> {tags: [...]}
    POST /vault/share         {token, role, value}
    POST /vault/catalog-key   {token, wrapped_b64}
    POST /recover             {token, intent, which, new_device_id, binding} -> {case_id}
    GET  /recover/state       ?case_id= -> {state}
    GET  /recover/info        ?case_id= -> {...}
    POST /recover/claim       {account_id, case_id, new_device_id,
                               claim_secret, address} -> {which, sub_share,
                               token, catalog_key_wrapped_b64}
    POST /verify              {account_id, proof, nonce, case_id?, binding?} -> {ok}

Errors come back as HTTP 4xx with {"error": <code>, "detail": <text>} and
are re-raised client-side as the matching exception class.
"""

from __future__ import annotations

import base64
import json
import threading
import urllib.error
import urllib.parse
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from . import errors
from .cloud import CloudService
from .errors import CloudUnreachable, TwofeError
from .transport import WireLog
from .wire import Message

_CODE_TO_ERROR = {
    cls.code: cls
    for cls in vars(errors).values()
    if isinstance(cls, type) and issubclass(cls, TwofeError)
}


def _raise_coded(code: str, detail: str):
    exc = _CODE_TO_ERROR.get(code, TwofeError)(detail)
    raise exc


class _Handler(BaseHTTPRequestHandler):
    service: CloudService  # set by make_server

    def log_message(self, *args):  # quiet
        pass

    def _reply(self, status: int, payload: dict) -> None:
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        if not length:
            return {}
        return json.loads(self.rfile.read(length))

    def _dispatch(self, method: str) -> None:
        svc = self.service
        parsed = urllib.parse.urlparse(self.path)
        q = urllib.parse.parse_qs(parsed.query)
        route = (method, parsed.path)
        try:
            body = self._body() if method == "POST" else {}
            if route == ("POST", "/enroll"):
                svc.create_account(body["account_id"], body["password"],
                                   body["recovery_secret"])
                return self._reply(200, {"ok": True})
            if route == ("POST", "/session"):
                token = svc.register_device(
                    body["account_id"], body["password"],
                    bytes.fromhex(body["device_id"]), body["role"],
                    body.get("address", ""))
                return self._reply(200, {"token": token.hex()})
            if route == ("POST", "/session/invalidate"):
                svc.invalidate_session(bytes.fromhex(body["token"]),
                                       bytes.fromhex(body["target_device_id"]))
                return self._reply(200, {"ok": True})
            if route == ("GET", "/session/pings"):
                pings = svc.poll_pings(bytes.fromhex(q["token"][0]))
                return self._reply(200, {"pings": [
                    {"case_id": p["case_id"], "which": p["which"],
                     "intent": p["intent"],
                     "new_device_id": p["new_device_id"].hex(),
                     "binding": p["binding"].hex()} for p in pings]})
            if route == ("POST", "/session/respond"):
                svc.auth_respond(bytes.fromhex(body["token"]),
                                 body["case_id"], bool(body["approved"]),
                                 bytes.fromhex(body.get("binding", "")))
                return self._reply(200, {"ok": True})
            if route == ("POST", "/file"):
                svc.file_put(bytes.fromhex(body["token"]),
                             base64.b64decode(body["record_b64"]))
                return self._reply(200, {"ok": True})
            if route == ("GET", "/file"):
                record = svc.file_get(bytes.fromhex(q["token"][0]),
                                      bytes.fromhex(q["tag"][0]))
                return self._reply(200, {
                    "record_b64": base64.b64encode(record).decode()})
            if route == ("POST", "/file/delete"):
                svc.file_delete(bytes.fromhex(body["token"]),
                                bytes.fromhex(body["tag"]))
                return self._reply(200, {"ok": True})
            if route == ("POST", "/file/undelete"):
                svc.file_undelete(bytes.fromhex(body["token"]),
                                  bytes.fromhex(body["tag"]))
                return self._reply(200, {"ok": True})
            if route == ("GET", "/file/list"):
                tags = svc.list_tags(bytes.fromhex(q["token"][0]))
                return self._reply(200, {"tags": [t.hex() for t in tags]})
            if route == ("POST", "/vault/share"):
                svc.deposit_share(bytes.fromhex(body["token"]), body["role"],
                                  int(body["value"], 16))
                return self._reply(200, {"ok": True})
            if route == ("POST", "/vault/catalog-key"):
                svc.deposit_catalog_key(bytes.fromhex(body["token"]),
                                        base64.b64decode(body["wrapped_b64"]))
                return self._reply(200, {"ok": True})
            if route == ("POST", "/recover"):
                case_id = svc.recover_request(
                    bytes.fromhex(body["token"]), body["intent"],
                    body["which"], bytes.fromhex(body["new_device_id"]),
                    bytes.fromhex(body["binding"]))
                return self._reply(200, {"case_id": case_id})
            if route == ("GET", "/recover/state"):
                return self._reply(200,
                                   {"state": svc.case_state(q["case_id"][0])})
            if route == ("GET", "/recover/info"):
                info = svc.case_info(q["case_id"][0])
                info["new_device_id"] = info["new_device_id"].hex()
                return self._reply(200, info)
            if route == ("POST", "/recover/claim"):
                out = svc.claim_release(
                    body["account_id"], body["case_id"],
                    bytes.fromhex(body["new_device_id"]),
                    bytes.fromhex(body["claim_secret"]),
                    body.get("address", ""))
                return self._reply(200, {
                    "which": out["which"],
                    "sub_share": f"{out['sub_share']:x}",
                    "token": out["token"].hex(),
                    "catalog_key_wrapped_b64": base64.b64encode(
                        out["catalog_key_wrapped"]).decode()})
            if route == ("POST", "/verify"):
                ok = svc.verify_identity(
                    body["account_id"], body["proof"],
                    bytes.fromhex(body["nonce"]),
                    case_id=body.get("case_id"),
                    binding=bytes.fromhex(body.get("binding", "")))
                return self._reply(200, {"ok": ok})
            return self._reply(404, {"error": "error",
                                     "detail": "no such endpoint"})
        except TwofeError as exc:
            return self._reply(400, {"error": exc.code, "detail": str(exc)})
        except (KeyError, ValueError) as exc:
            return self._reply(400, {"error": "invalid-encoding",
                                     "detail": repr(exc)})

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")


def ensure_tls_material(tls_dir: str) -> tuple[str, str]:
    """Self-signed server credentials, generated once and reused.  Clients
    pin the certificate file (config key ``cloud_ca``); there is no
    third-party CA in this deployment model."""
    import datetime
    import ipaddress
    import os

    from cryptography import x509
    from cryptography.hazmat.primitives import hashes, serialization
    from cryptography.hazmat.primitives.asymmetric import ec
    from cryptography.x509.oid import NameOID

    os.makedirs(tls_dir, exist_ok=True)
    key_path = os.path.join(tls_dir, "cloud-key.pem")
    cert_path = os.path.join(tls_dir, "cloud-cert.pem")
    if os.path.exists(key_path) and os.path.exists(cert_path):
        return key_path, cert_path

    key = ec.generate_private_key(ec.SECP256R1())
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "twofe-cloud")])
    now = datetime.datetime.now(datetime.timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - datetime.timedelta(days=1))
        .not_valid_after(now + datetime.timedelta(days=3650))
        .add_extension(
            x509.SubjectAlternativeName([
                x509.DNSName("localhost"),
                x509.IPAddress(ipaddress.IPv4Address("127.0.0.1")),
            ]),
            critical=False,
        )
        .sign(key, hashes.SHA256())
    )
    with open(key_path, "wb") as fh:
        fh.write(key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption()))
    os.chmod(key_path, 0o600)
    with open(cert_path, "wb") as fh:
        fh.write(cert.public_bytes(serialization.Encoding.PEM))
    return key_path, cert_path


class CloudHttpServer:
    def __init__(self, service: CloudService, host: str = "127.0.0.1",
                 port: int = 0, tls_dir: Optional[str] = None):
        handler = type("BoundHandler", (_Handler,), {"service": service})
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.port = self.httpd.server_address[1]
        self.scheme = "http"
        self.cert_path: Optional[str] = None
        if tls_dir is not None:
            import ssl

            key_path, self.cert_path = ensure_tls_material(tls_dir)
            ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
            ctx.load_cert_chain(self.cert_path, key_path)
            self.httpd.socket = ctx.wrap_socket(self.httpd.socket,
                                                server_side=True)
            self.scheme = "https"
        self._thread: Optional[threading.Thread] = None

    def url(self, host: str = "127.0.0.1") -> str:
        return f"{self.scheme}://{host}:{self.port}"

    def start(self) -> None:
        self._thread = threading.Thread(target=self.httpd.serve_forever,
                                        daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.httpd.shutdown()
        if self._thread:
            self._thread.join(timeout=2)


class HttpCloudClient:
    """Same surface as engine.CloudClient, over the HTTP mapping.

    For https endpoints the server's self-signed certificate must be
    pinned via ``cafile`` (config key ``cloud_ca``)."""

    def __init__(self, base_url: str, log: Optional[WireLog] = None,
                 timeout: float = 10.0, cafile: Optional[str] = None):
        self.base_url = base_url.rstrip("/")
        self.log = log or WireLog()
        self.timeout = timeout
        self._ssl_context = None
        if self.base_url.startswith("https"):
            import ssl

            self._ssl_context = ssl.create_default_context(cafile=cafile)

    def _call(self, method: str, path: str, body: Optional[dict] = None,
              query: Optional[dict] = None) -> dict:
        url = self.base_url + path
        if query:
            url += "?" + urllib.parse.urlencode(query)
        data = json.dumps(body).encode() if body is not None else None
        req = urllib.request.Request(url, data=data, method=method,
                                     headers={"Content-Type":
                                              "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout,
                                        context=self._ssl_context) as resp:
                payload = json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            try:
                payload = json.loads(exc.read())
            except Exception:
                raise CloudUnreachable(f"bad error payload: {exc}") from None
            _raise_coded(payload.get("error", "error"),
                         payload.get("detail", ""))
        except (urllib.error.URLError, OSError) as exc:
            raise CloudUnreachable(str(exc)) from None
        return payload

    def _log_msg(self, flow: str, session_id: bytes, msg_type: str,
                 **fields: bytes) -> None:
        self.log.record("send", "cloud",
                        Message(flow=flow, session_id=session_id,
                                msg_type=msg_type, fields=fields))

    # -- admin path -----------------------------------------------------------

    def create_account(self, account_id, password, recovery_secret):
        self._call("POST", "/enroll", {"account_id": account_id,
                                       "password": password,
                                       "recovery_secret": recovery_secret})

    def register_device(self, account_id, password, device_id, role,
                        address=""):
        out = self._call("POST", "/session",
                         {"account_id": account_id, "password": password,
                          "device_id": device_id.hex(), "role": role,
                          "address": address})
        return bytes.fromhex(out["token"])

    def deposit_share(self, token, role, value):
        self._call("POST", "/vault/share", {"token": token.hex(),
                                            "role": role,
                                            "value": f"{value:x}"})

    def deposit_catalog_key(self, token, wrapped):
        self._call("POST", "/vault/catalog-key",
                   {"token": token.hex(),
                    "wrapped_b64": base64.b64encode(wrapped).decode()})

    def poll_pings(self, token):
        out = self._call("GET", "/session/pings",
                         query={"token": token.hex()})
        return [{"case_id": p["case_id"], "which": p["which"],
                 "intent": p["intent"],
                 "new_device_id": bytes.fromhex(p["new_device_id"]),
                 "binding": bytes.fromhex(p["binding"])}
                for p in out["pings"]]

    def case_state(self, case_id):
        return self._call("GET", "/recover/state",
                          query={"case_id": case_id})["state"]

    def case_info(self, case_id):
        out = self._call("GET", "/recover/info", query={"case_id": case_id})
        out["new_device_id"] = bytes.fromhex(out["new_device_id"])
        return out

    def verify_identity(self, account_id, proof, nonce, case_id=None,
                        binding=b""):
        body = {"account_id": account_id, "proof": proof,
                "nonce": nonce.hex(), "binding": binding.hex()}
        if case_id is not None:
            body["case_id"] = case_id
        return self._call("POST", "/verify", body)["ok"]

    def claim_release(self, account_id, case_id, new_device_id, claim_secret,
                      address=""):
        out = self._call("POST", "/recover/claim",
                         {"account_id": account_id, "case_id": case_id,
                          "new_device_id": new_device_id.hex(),
                          "claim_secret": claim_secret.hex(),
                          "address": address})
        return {"which": out["which"],
                "sub_share": int(out["sub_share"], 16),
                "token": bytes.fromhex(out["token"]),
                "catalog_key_wrapped": base64.b64decode(
                    out["catalog_key_wrapped_b64"])}

    def list_tags(self, token):
        out = self._call("GET", "/file/list", query={"token": token.hex()})
        return [bytes.fromhex(t) for t in out["tags"]]

    def file_undelete(self, token, tag):
        self._call("POST", "/file/undelete", {"token": token.hex(),
                                              "tag": tag.hex()})

    # -- data path (wire-logged) --------------------------------------------------

    def file_put(self, token, record_bytes, *, flow, session_id):
        self._log_msg(flow, session_id, "FILE_PUT", record=record_bytes)
        self._call("POST", "/file",
                   {"token": token.hex(),
                    "record_b64": base64.b64encode(record_bytes).decode()})

    def file_get(self, token, tag, *, flow, session_id):
        self._log_msg(flow, session_id, "FILE_GET", tag=tag)
        out = self._call("GET", "/file", query={"token": token.hex(),
                                                "tag": tag.hex()})
        return base64.b64decode(out["record_b64"])

    def file_delete(self, token, tag):
        self._call("POST", "/file/delete", {"token": token.hex(),
                                            "tag": tag.hex()})

    def recover_request(self, token, intent, which, new_device_id, binding,
                        *, session_id):
        flow = "Migrate" if intent == "migrate" else "Recover"
        self._log_msg(flow, session_id, "RECOVER_REQ",
                      which=b"\x01" if which == "primary" else b"\x02",
                      new_device_id=new_device_id, binding=binding)
        return self._call("POST", "/recover",
                          {"token": token.hex(), "intent": intent,
                           "which": which,
                           "new_device_id": new_device_id.hex(),
                           "binding": binding.hex()})["case_id"]

    def auth_respond(self, token, case_id, approved, binding=b"", *,
                     session_id):
        self._log_msg("Migrate", session_id, "AUTH_APPROVE",
                      request_id=bytes.fromhex(case_id),
                      approved=b"\x01" if approved else b"\x00",
                      binding=binding)
        self._call("POST", "/session/respond",
                   {"token": token.hex(), "case_id": case_id,
                    "approved": approved, "binding": binding.hex()})

    def invalidate_session(self, token, target_device_id, *, session_id):
        self._log_msg("Session", session_id, "SESSION_INVALIDATE",
                      target_device_id=target_device_id)
        self._call("POST", "/session/invalidate",
                   {"token": token.hex(),
                    "target_device_id": target_device_id.hex()})
