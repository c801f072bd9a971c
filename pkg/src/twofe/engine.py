"""The lifecycle state machines: enrollment, encryption, decryption,
migration, recovery, and key refresh, orchestrated over the wire.

``PrimaryDevice`` drives every flow; ``SecondaryDevice`` answers message by
message.  Both run unchanged over an in-process link (tests, scenarios), a
TCP channel (the real daemon), and either a direct or HTTP cloud client.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

from . import filecrypto
from .agents import KIND_DECRYPT, KIND_MIGRATE_AUTH, ApprovalQueue
from .cloud import CloudService
from .dleq import DleqProof
from .errors import (
    ApprovalDenied,
    BadProofError,
    DuplicateEnrollment,
    OldDeviceResponded,
    OldDeviceUnreachable,
    PairingFailure,
    PolicyDenied,
    ProtocolOrderError,
    SrAbort,
    TwofeError,
    UnknownTag,
    VerificationFailed,
)
from .filecrypto import CATALOG_TAG, Catalog, FileRecord
from .group import Group, Rng, frame
from .randomness import ROLE_INITIATOR, ROLE_RESPONDER, SeedSession
from .sharing import ShareSet, refresh_pair, split_own_share
from .state import DeviceState
from .tprf import prf_input, tprf_finish, tprf_respond
from .transport import (
    PeerLink,
    SecureChannel,
    WireLog,
    derive_channel_keys,
)
from .wire import Message


@dataclass
class EngineConfig:
    sr_timeout: float = 30.0       # a silent partner aborts the session
    peer_timeout: float = 30.0     # waiting on a reply frame
    ping_timeout: float = 60.0     # silence after which recovery kicks in
    case_poll_interval: float = 0.05
    case_wait_budget: float = 120.0


def wrap_catalog_key(recovery_secret: str, catalog_key: bytes,
                     rng: Optional[Rng] = None) -> bytes:
    """Vault copy of the catalog key, opaque to the cloud: encrypted under a
    key derived from the recovery secret the user proves during recovery."""
    from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

    kek = hashlib.sha256(frame(b"2FE-VAULT", [recovery_secret.encode()])).digest()
    nonce = (rng or Rng()).randbytes(12)
    return nonce + ChaCha20Poly1305(kek).encrypt(nonce, catalog_key, b"")


def unwrap_catalog_key(recovery_secret: str, wrapped: bytes) -> bytes:
    from cryptography.exceptions import InvalidTag
    from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

    kek = hashlib.sha256(frame(b"2FE-VAULT", [recovery_secret.encode()])).digest()
    try:
        return ChaCha20Poly1305(kek).decrypt(wrapped[:12], wrapped[12:], b"")
    except InvalidTag:
        raise VerificationFailed("catalog key unwrap failed") from None


def sas_code(nonce_a: bytes, nonce_b: bytes, id_a: bytes, id_b: bytes,
             pub_a: bytes = b"", pub_b: bytes = b"") -> str:
    """Short authenticated string both devices display during pairing; it
    covers the key-exchange publics, so the human comparison authenticates
    the channel keys (an interposer changes the code)."""
    digest = hashlib.sha256(
        frame(b"2FE-SAS", [nonce_a, nonce_b, id_a, id_b, pub_a, pub_b])
    ).digest()
    return f"{int.from_bytes(digest[:4], 'big') % 1_000_000:06d}"


def pairing_psk(shared_point_encoding: bytes) -> bytes:
    """Long-lived channel key both devices keep from the pairing exchange."""
    return hashlib.sha256(frame(b"2FE-PAIR-PSK",
                                [shared_point_encoding])).digest()


def pairing_upgrade_base(shared_point_encoding: bytes) -> bytes:
    """Key base for securing the remainder of the pairing connection."""
    return hashlib.sha256(frame(b"2FE-PAIR-UPGRADE",
                                [shared_point_encoding])).digest()


class CloudClient:
    """In-process client: forwards to a CloudService instance and mirrors the
    data-path calls into the device's wire log in canonical message form."""

    def __init__(self, service: CloudService, log: WireLog):
        self.service = service
        self.log = log

    def _log(self, direction: str, flow: str, session_id: bytes,
             msg_type: str, **fields: bytes) -> None:
        self.log.record(direction, "cloud",
                        Message(flow=flow, session_id=session_id,
                                msg_type=msg_type, fields=fields))

    # thin pass-throughs (admin path)
    def create_account(self, *a, **kw):
        return self.service.create_account(*a, **kw)

    def register_device(self, *a, **kw):
        return self.service.register_device(*a, **kw)

    def deposit_share(self, *a, **kw):
        return self.service.deposit_share(*a, **kw)

    def deposit_catalog_key(self, *a, **kw):
        return self.service.deposit_catalog_key(*a, **kw)

    def poll_pings(self, *a, **kw):
        return self.service.poll_pings(*a, **kw)

    def case_state(self, *a, **kw):
        return self.service.case_state(*a, **kw)

    def case_info(self, *a, **kw):
        return self.service.case_info(*a, **kw)

    def verify_identity(self, *a, **kw):
        return self.service.verify_identity(*a, **kw)

    def claim_release(self, *a, **kw):
        return self.service.claim_release(*a, **kw)

    def list_tags(self, *a, **kw):
        return self.service.list_tags(*a, **kw)

    def file_undelete(self, *a, **kw):
        return self.service.file_undelete(*a, **kw)

    # data path (wire-logged)
    def file_put(self, token: bytes, record_bytes: bytes, *, flow: str,
                 session_id: bytes) -> None:
        self._log("send", flow, session_id, "FILE_PUT", record=record_bytes)
        self.service.file_put(token, record_bytes)

    def file_get(self, token: bytes, tag: bytes, *, flow: str,
                 session_id: bytes) -> bytes:
        self._log("send", flow, session_id, "FILE_GET", tag=tag)
        return self.service.file_get(token, tag)

    def file_delete(self, token: bytes, tag: bytes) -> None:
        self.service.file_delete(token, tag)

    def recover_request(self, token: bytes, intent: str, which: str,
                        new_device_id: bytes, binding: bytes, *,
                        session_id: bytes) -> str:
        flow = "Migrate" if intent == "migrate" else "Recover"
        which_byte = b"\x01" if which == "primary" else b"\x02"
        self._log("send", flow, session_id, "RECOVER_REQ", which=which_byte,
                  new_device_id=new_device_id, binding=binding)
        return self.service.recover_request(token, intent, which,
                                            new_device_id, binding)

    def auth_respond(self, token: bytes, case_id: str, approved: bool,
                     binding: bytes = b"", *, session_id: bytes) -> None:
        self._log("send", "Migrate", session_id, "AUTH_APPROVE",
                  request_id=bytes.fromhex(case_id),
                  approved=b"\x01" if approved else b"\x00", binding=binding)
        self.service.auth_respond(token, case_id, approved, binding)

    def invalidate_session(self, token: bytes, target_device_id: bytes, *,
                           session_id: bytes) -> None:
        self._log("send", "Session", session_id, "SESSION_INVALIDATE",
                  target_device_id=target_device_id)
        self.service.invalidate_session(token, target_device_id)


def _abort(flow: str, session_id: bytes, exc: TwofeError) -> Message:
    return Message(flow=flow, session_id=session_id, msg_type="FLOW_ABORT",
                   fields={"code": exc.code.encode(),
                           "detail": str(exc).encode()})


_ABORT_ERRORS = {
    "policy-denied": PolicyDenied,
    "bad-proof": BadProofError,
    "sr-abort": SrAbort,
    "protocol-order": ProtocolOrderError,
    "duplicate-enrollment": DuplicateEnrollment,
}


def raise_from_abort(msg: Message) -> None:
    code = msg.field("code").decode()
    detail = msg.field("detail").decode()
    exc_type = _ABORT_ERRORS.get(code, TwofeError)
    exc = exc_type(detail)
    exc.code = code
    raise exc


class _DeviceBase:
    def __init__(self, group: Group, state: DeviceState, cloud: CloudClient,
                 account_password: str, rng: Optional[Rng] = None,
                 config: Optional[EngineConfig] = None,
                 approvals: Optional[ApprovalQueue] = None):
        self.group = group
        self.state = state
        self.cloud = cloud
        self.password = account_password
        self.rng = rng or Rng()
        self.config = config or EngineConfig()
        self.approvals = approvals or ApprovalQueue()
        self.log = cloud.log
        self._state_lock = threading.RLock()
        # benchmark instrumentation: when set, crypto sections accumulate
        # their wall time under perf["compute"]
        self.perf: Optional[dict] = None
        # when set, share-material mutations write the state file through
        # immediately (the daemon wires this up)
        self.state_path: Optional[str] = None

    def _perf_add(self, key: str, dt: float) -> None:
        if self.perf is not None:
            self.perf[key] = self.perf.get(key, 0.0) + dt

    def _persist(self) -> None:
        if self.state_path:
            from .state import save_state

            save_state(self.state, self.state_path)

    def ensure_registered(self, address: str = "") -> None:
        if not self.state.session_token:
            self.state.session_token = self.cloud.register_device(
                self.state.account_id, self.password, self.state.device_id,
                self.state.role, address)

    def invalidate_session_of(self, target_device_id: bytes) -> None:
        self.cloud.invalidate_session(
            self.state.session_token, target_device_id,
            session_id=self.rng.randbytes(16))

    def poll_and_prompt(self) -> None:
        """Answer pending replacement pings; the user decides via the
        approval queue (kind = migrate-auth)."""
        if not self.state.session_token or self.state.invalidated:
            return
        for ping in self.cloud.poll_pings(self.state.session_token):
            self.log.record("recv", "cloud", Message(
                flow="Migrate" if ping["intent"] == "migrate" else "Recover",
                session_id=bytes.fromhex(ping["case_id"]),
                msg_type="AUTH_PING",
                fields={"request_id": bytes.fromhex(ping["case_id"]),
                        "which": b"\x01" if ping["which"] == "primary"
                        else b"\x02",
                        "new_device_id": ping["new_device_id"],
                        "binding": ping["binding"]}))
            ok = self.approvals.admit(KIND_MIGRATE_AUTH,
                                      ping["new_device_id"],
                                      f"{ping['intent']} {ping['which']}")
            self.cloud.auth_respond(self.state.session_token,
                                    ping["case_id"], ok,
                                    binding=ping["binding"],
                                    session_id=self.rng.randbytes(16))


class SecondaryDevice(_DeviceBase):
    """The helper: answers the primary's protocol messages, enforces the
    approval policy, and keeps a read-only catalog mirror for prompts."""

    def __init__(self, group: Group, state: DeviceState, cloud: CloudClient,
                 account_password: str,
                 approvals: Optional[ApprovalQueue] = None,
                 rng: Optional[Rng] = None,
                 config: Optional[EngineConfig] = None):
        super().__init__(group, state, cloud, account_password, rng, config,
                         approvals)
        self.sessions: dict[bytes, dict] = {}
        self._seen_sessions: set[bytes] = set()
        self._catalog_mirror: Optional[Catalog] = None
        self._pending_recovered_share: Optional[int] = None
        self._pending_channel_keys: Optional[tuple[bytes, bytes]] = None
        self.last_sas = ""

    # -- catalog mirror -----------------------------------------------------

    def _resolve_name(self, tag: bytes) -> Optional[str]:
        if not self.state.catalog_key:
            return None
        try:
            blob = self.cloud.file_get(self.state.session_token, CATALOG_TAG,
                                       flow="Decrypt",
                                       session_id=b"\x00" * 16)
            record = FileRecord.decode(blob)
            self._catalog_mirror = Catalog.decrypt(self.state.catalog_key,
                                                   record.body)
        except TwofeError:
            pass  # offline or no catalog yet: fall back to a stale mirror
        if self._catalog_mirror is None:
            return None
        return self._catalog_mirror.name_for(tag)

    # -- recovery claim ------------------------------------------------------

    def claim_recovered_share(self, case_id: str, claim_secret: bytes) -> None:
        released = self.cloud.claim_release(
            self.state.account_id, case_id, self.state.device_id,
            claim_secret)
        self.state.session_token = released["token"]
        self._persist()
        self._pending_recovered_share = released["sub_share"]

    # -- protocol handler ------------------------------------------------------

    def handle(self, msg: Message) -> list[Message]:
        self._sweep_stale_sessions()
        try:
            return self._dispatch(msg)
        except TwofeError as exc:
            self.sessions.pop(msg.session_id, None)
            return [_abort(msg.flow, msg.session_id, exc)]

    def _sweep_stale_sessions(self) -> None:
        # a partner that vanishes mid-flow must not leave seeds parked in
        # memory; its session can never resume (ids are single-use)
        cutoff = time.monotonic() - self.config.sr_timeout
        for session_id in [sid for sid, ctx in self.sessions.items()
                           if ctx.get("created", 0) < cutoff]:
            self._finish_session(session_id)

    def _dispatch(self, msg: Message) -> list[Message]:
        handler = {
            "PAIR_INFO": self._on_pair_info,
            "ENROLL_SHARES": self._on_enroll_shares,
            "SR_COMMIT": self._on_sr_commit,
            "SR_REVEAL": self._on_sr_reveal,
            "TPRF_REQ": self._on_tprf_req,
            "SHARE_RELEASE": self._on_share_release,
            "REFRESH_DELTA": self._on_refresh_delta,
            "RECOVER_REQ": self._on_recover_req,
        }.get(msg.msg_type)
        if handler is None:
            raise ProtocolOrderError(f"unexpected {msg.msg_type}")
        return handler(msg)

    def _session(self, msg: Message, expect_step: str) -> dict:
        ctx = self.sessions.get(msg.session_id)
        if ctx is None or ctx.get("step") != expect_step \
                or ctx.get("flow") != msg.flow:
            raise ProtocolOrderError(
                f"{msg.msg_type} out of order for this session")
        return ctx

    def _new_session(self, msg: Message) -> dict:
        if msg.session_id in self._seen_sessions:
            raise ProtocolOrderError("session id reuse (replay?)")
        self._seen_sessions.add(msg.session_id)
        ctx = {"flow": msg.flow, "step": "new", "created": time.monotonic()}
        self.sessions[msg.session_id] = ctx
        return ctx

    def _finish_session(self, session_id: bytes) -> None:
        ctx = self.sessions.pop(session_id, None)
        if ctx:
            sr = ctx.get("sr")
            if sr is not None:
                sr.seed = None
                sr.s0 = None
                sr.s0_padded = None
            ctx.clear()

    def _on_pair_info(self, msg: Message) -> list[Message]:
        with self._state_lock:
            peer_pub = msg.field("ecdh_pub")
            if peer_pub:
                return self._pair_key_round(msg, peer_pub)
            return self._pair_catalog_round(msg)

    def _pair_key_round(self, msg: Message, peer_pub: bytes) -> list[Message]:
        self.state.peer_device_id = msg.field("device_id")
        try:
            self.ensure_registered()
        except TwofeError:
            pass  # account may not exist yet; enrollment registers
        e = self.group.scalar_random(self.rng)
        my_pub = self.group.base_mult(e).encoding
        shared = self.group.scalar_mult(
            e, self.group.element_decode(peer_pub)).encoding
        self.state.channel_key = pairing_psk(shared)
        self._persist()
        self._pending_channel_keys = derive_channel_keys(
            pairing_upgrade_base(shared), am_primary=False)
        nonce = self.rng.randbytes(16)
        # both screens show the same code; the user compares them
        self.last_sas = sas_code(msg.field("sas_nonce"), nonce,
                                 msg.field("device_id"),
                                 self.state.device_id, peer_pub, my_pub)
        return [Message(flow=msg.flow, session_id=msg.session_id,
                        msg_type="PAIR_INFO",
                        fields={"device_id": self.state.device_id,
                                "role": b"\x02", "address": b"",
                                "catalog_key": b"", "sas_nonce": nonce,
                                "ecdh_pub": my_pub})]

    def _pair_catalog_round(self, msg: Message) -> list[Message]:
        # second round, on the now-protected connection: whoever holds the
        # catalog key hands it over
        offered_key = msg.field("catalog_key")
        if offered_key:
            self.state.catalog_key = offered_key
        reply_key = b"" if offered_key else self.state.catalog_key
        return [Message(flow=msg.flow, session_id=msg.session_id,
                        msg_type="PAIR_INFO",
                        fields={"device_id": self.state.device_id,
                                "role": b"\x02", "address": b"",
                                "catalog_key": reply_key,
                                "sas_nonce": bytes(16), "ecdh_pub": b""})]

    def take_pending_channel_keys(self) -> Optional[tuple[bytes, bytes]]:
        keys = self._pending_channel_keys
        self._pending_channel_keys = None
        return keys

    def _on_enroll_shares(self, msg: Message) -> list[Message]:
        with self._state_lock:
            if msg.flow == "Enroll":
                if self.state.enrolled:
                    raise DuplicateEnrollment("device already enrolled")
                if not self.state.peer_device_id:
                    raise PairingFailure("pair before enrolling")
                self.ensure_registered()
                dealt = ShareSet.deal(self.group, "secondary", rng=self.rng)
                self.state.own_share = dealt.own_share
                self.state.sub_share_peer = dealt.sub_share_peer
                self.state.sub_share_cloud = dealt.sub_share_cloud
                # k_C^D arrives from the primary; keep it for its recovery
                self._store_peer_sub_share(msg)
                self.cloud.deposit_share(self.state.session_token,
                                         "secondary", dealt.sub_share_cloud)
                pk = self.group.base_mult(dealt.own_share)
                self.state.pk = pk.encoding
                self.state.enrolled = True
                self._persist()
                return [Message(flow=msg.flow, session_id=msg.session_id,
                                msg_type="ENROLL_SHARES",
                                fields={"sub_share": self.group.scalar_encode(
                                    dealt.sub_share_peer),
                                    "pk": pk.encoding})]
            # refresh redistribution: the primary's new sub-share for us
            self._store_peer_sub_share(msg)
            self._persist()
            return []

    def _store_peer_sub_share(self, msg: Message) -> None:
        self.state.held_for_peer = self.group.scalar_decode(
            msg.field("sub_share"))

    def _on_sr_commit(self, msg: Message) -> list[Message]:
        if msg.flow != "Encrypt":
            raise ProtocolOrderError("coin toss only happens in encryption")
        ctx = self._new_session(msg)
        sr = SeedSession(self.group, ROLE_RESPONDER, rng=self.rng)
        sr.on_commit(msg.field("commitment"))
        ctx["sr"] = sr
        ctx["step"] = "sr-shared"
        return [Message(flow=msg.flow, session_id=msg.session_id,
                        msg_type="SR_SHARE", fields={"share": sr.respond()})]

    def _on_sr_reveal(self, msg: Message) -> list[Message]:
        ctx = self._session(msg, "sr-shared")
        seed = ctx["sr"].on_reveal(msg.field("preimage"))
        ctx["seed"] = seed
        ctx["step"] = "seeded"
        return []

    def _on_tprf_req(self, msg: Message) -> list[Message]:
        if not self.state.enrolled:
            raise ProtocolOrderError("not enrolled")
        tag = msg.field("tag")
        seed = msg.field("seed")
        if msg.flow == "Encrypt":
            ctx = self._session(msg, "seeded")
            if seed != ctx["seed"]:
                raise ProtocolOrderError(
                    "seed disagrees with the coin toss for this session")
        elif msg.flow == "Decrypt":
            ctx = self._new_session(msg)
            filename = self._resolve_name(tag)
            if not self.approvals.admit(KIND_DECRYPT, tag, filename):
                raise PolicyDenied("user or policy rejected this decryption")
        else:
            raise ProtocolOrderError("TPRF_REQ outside encrypt/decrypt")
        t0 = time.perf_counter()
        x = prf_input(tag, seed)
        blinded, proof = tprf_respond(self.group, x, self.state.own_share,
                                      self.rng)
        self._perf_add("compute", time.perf_counter() - t0)
        self._finish_session(msg.session_id)
        return [Message(flow=msg.flow, session_id=msg.session_id,
                        msg_type="TPRF_RESP",
                        fields={"blinded": blinded.encoding,
                                "proof": proof.encode(self.group)})]

    def _on_share_release(self, msg: Message) -> list[Message]:
        # the primary forwards the sub-share it holds for us; combined with
        # the claimed vault share this restores our key share
        with self._state_lock:
            if self._pending_recovered_share is None:
                raise ProtocolOrderError("no pending recovery claim")
            sub_peer = self.group.scalar_decode(msg.field("sub_share"))
            self.state.own_share = self.group.scalar_add(
                self._pending_recovered_share, sub_peer)
            self._pending_recovered_share = None
            self.state.enrolled = True
            self._persist()
            return []

    def _on_refresh_delta(self, msg: Message) -> list[Message]:
        with self._state_lock:
            if not self.state.enrolled:
                raise ProtocolOrderError("not enrolled")
            delta = self.group.scalar_decode(msg.field("delta"))
            self.state.own_share = self.group.scalar_add(
                self.state.own_share, delta)
            # re-deal sub-shares exactly as in enrollment; the key itself is
            # not regenerated
            sub_peer, sub_cloud = split_own_share(self.group,
                                                  self.state.own_share,
                                                  self.rng)
            self.state.sub_share_peer = sub_peer
            self.state.sub_share_cloud = sub_cloud
            self.cloud.deposit_share(self.state.session_token, "secondary",
                                     sub_cloud)
            pk = self.group.base_mult(self.state.own_share)
            self.state.pk = pk.encoding
            self.state.epoch += 1
            self._persist()
            return [Message(flow=msg.flow, session_id=msg.session_id,
                            msg_type="ENROLL_SHARES",
                            fields={"sub_share": self.group.scalar_encode(
                                sub_peer), "pk": pk.encoding})]

    def _on_recover_req(self, msg: Message) -> list[Message]:
        # a new primary asks for the sub-share we hold for the old primary;
        # only release it once the cloud confirms the case went through the
        # authorization (or identity-verification) gate and was released to
        # the same device that is asking
        case_id = msg.field("binding").decode()
        case = self.cloud.case_info(case_id)
        if case["state"] != "released":
            raise VerificationFailed("replacement case not released")
        if case["which"] != "primary" or \
                case["new_device_id"] != msg.field("new_device_id"):
            raise VerificationFailed("case does not match the asking device")
        with self._state_lock:
            self.state.peer_device_id = msg.field("new_device_id")
            return [Message(flow=msg.flow, session_id=msg.session_id,
                            msg_type="SHARE_RELEASE",
                            fields={"which": b"\x01",
                                    "sub_share": self.group.scalar_encode(
                                        self.state.held_for_peer)})]


class PrimaryDevice(_DeviceBase):
    """The file-accessing device: drives every flow end to end."""

    def __init__(self, group: Group, state: DeviceState, cloud: CloudClient,
                 account_password: str, link: Optional[PeerLink] = None,
                 rng: Optional[Rng] = None,
                 config: Optional[EngineConfig] = None,
                 approvals: Optional[ApprovalQueue] = None):
        super().__init__(group, state, cloud, account_password, rng, config,
                         approvals)
        self.link = link
        # deployment hook: lets in-process deployments advance the other
        # parties (ping polls, clock) while we wait on a recovery case
        self.pump: Optional[Callable[[], None]] = None

    # -- pairing ----------------------------------------------------------------

    def pair(self, flow: str = "Enroll",
             expect_catalog_key: bool = False) -> str:
        """Pair with the helper over the local channel: a SAS-verified key
        exchange establishes the long-lived channel key and protects the
        rest of the connection, then the catalog key crosses over it.
        Returns the SAS code for the user to compare on both screens."""
        with self._state_lock:
            if not self.state.catalog_key and not expect_catalog_key:
                self.state.catalog_key = filecrypto.new_catalog_key(self.rng)
            e = self.group.scalar_random(self.rng)
            my_pub = self.group.base_mult(e).encoding
            nonce = self.rng.randbytes(16)
            session_id = self.rng.randbytes(16)
            reply = self.link.request(Message(
                flow=flow, session_id=session_id, msg_type="PAIR_INFO",
                fields={"device_id": self.state.device_id, "role": b"\x01",
                        "address": b"", "catalog_key": b"",
                        "sas_nonce": nonce, "ecdh_pub": my_pub}))
            if reply.msg_type == "FLOW_ABORT":
                raise_from_abort(reply)
            if reply.msg_type != "PAIR_INFO":
                raise PairingFailure(f"unexpected {reply.msg_type}")
            self.state.peer_device_id = reply.field("device_id")
            peer_pub = reply.field("ecdh_pub")
            if not peer_pub:
                raise PairingFailure("helper skipped the key exchange")
            shared = self.group.scalar_mult(
                e, self.group.element_decode(peer_pub)).encoding
            self.state.channel_key = pairing_psk(shared)
            sas = sas_code(nonce, reply.field("sas_nonce"),
                           self.state.device_id, self.state.peer_device_id,
                           my_pub, peer_pub)
            # in-place upgrade when the link rides a raw byte channel
            # (in-process links have nothing to wrap)
            channel = getattr(self.link, "channel", None)
            if channel is not None:
                send_key, recv_key = derive_channel_keys(
                    pairing_upgrade_base(shared), am_primary=True)
                self.link.channel = SecureChannel(channel, send_key,
                                                  recv_key)
            # second round, now protected: move the catalog key across
            reply2 = self.link.request(Message(
                flow=flow, session_id=session_id, msg_type="PAIR_INFO",
                fields={"device_id": self.state.device_id, "role": b"\x01",
                        "address": b"",
                        "catalog_key": b"" if expect_catalog_key
                        else self.state.catalog_key,
                        "sas_nonce": bytes(16), "ecdh_pub": b""}))
            if reply2.msg_type != "PAIR_INFO":
                raise PairingFailure(f"unexpected {reply2.msg_type}")
            if expect_catalog_key:
                offered = reply2.field("catalog_key")
                if not offered:
                    raise PairingFailure("helper has no catalog key to share")
                self.state.catalog_key = offered
            return sas

    # -- enrollment ----------------------------------------------------------------

    def enroll(self, recovery_secret: str, create_account: bool = True) -> None:
        with self._state_lock:
            if self.state.enrolled:
                raise DuplicateEnrollment("device already enrolled")
            if create_account:
                self.cloud.create_account(self.state.account_id,
                                          self.password, recovery_secret)
            self.ensure_registered()
            if not self.state.peer_device_id:
                self.pair()
            dealt = ShareSet.deal(self.group, "primary", rng=self.rng)
            session_id = self.rng.randbytes(16)
            reply = self.link.request(Message(
                flow="Enroll", session_id=session_id,
                msg_type="ENROLL_SHARES",
                fields={"sub_share": self.group.scalar_encode(
                    dealt.sub_share_peer), "pk": b""}))
            if reply.msg_type == "FLOW_ABORT":
                raise_from_abort(reply)
            self.state.own_share = dealt.own_share
            self.state.sub_share_peer = dealt.sub_share_peer
            self.state.sub_share_cloud = dealt.sub_share_cloud
            self.state.held_for_peer = self.group.scalar_decode(
                reply.field("sub_share"))
            self.state.pk = reply.field("pk")
            self.cloud.deposit_share(self.state.session_token, "primary",
                                     dealt.sub_share_cloud)
            self.cloud.deposit_catalog_key(
                self.state.session_token,
                wrap_catalog_key(recovery_secret, self.state.catalog_key,
                                 self.rng))
            self.state.enrolled = True

    # -- catalog ----------------------------------------------------------------

    def _load_catalog(self, flow: str, session_id: bytes) -> Catalog:
        try:
            record = FileRecord.decode(self.cloud.file_get(
                self.state.session_token, CATALOG_TAG, flow=flow,
                session_id=session_id))
        except UnknownTag:
            return Catalog()
        return Catalog.decrypt(self.state.catalog_key, record.body)

    def _store_catalog(self, catalog: Catalog, flow: str,
                       session_id: bytes) -> None:
        blob = catalog.encrypt(self.state.catalog_key, self.rng)
        record = FileRecord(tag=CATALOG_TAG, seed=bytes(32), body=blob)
        self.cloud.file_put(self.state.session_token, record.encode(),
                            flow=flow, session_id=session_id)

    def list_files(self) -> dict[str, bytes]:
        session_id = self.rng.randbytes(16)
        return dict(self._load_catalog("Session", session_id).entries)

    # -- encryption ----------------------------------------------------------------

    def encrypt_flow(self, plaintext: bytes, name: str) -> bytes:
        """Encrypt and upload; returns the file tag."""
        self._require_enrolled()
        session_id = self.rng.randbytes(16)
        tag = filecrypto.generate_tag(self.rng)
        sr, seed = self._run_seed_exchange(session_id)
        key = self._derive_key("Encrypt", session_id, tag, seed)
        body = filecrypto.encrypt_file(key, plaintext, tag)
        del key
        record = FileRecord(tag=tag, seed=seed, body=body)
        self.cloud.file_put(self.state.session_token, record.encode(),
                            flow="Encrypt", session_id=session_id)
        catalog = self._load_catalog("Encrypt", session_id)
        catalog.put(name, tag)
        self._store_catalog(catalog, "Encrypt", session_id)
        sr.abort()  # wipe seed material from the session object
        return tag

    def _run_seed_exchange(self, session_id: bytes) -> tuple[SeedSession, bytes]:
        """The coin toss for one encryption (the helper must be reachable
        before anything touches the cloud)."""
        t0 = time.perf_counter()
        sr = SeedSession(self.group, ROLE_INITIATOR, rng=self.rng)
        commitment = sr.commit()
        self._perf_add("compute", time.perf_counter() - t0)
        reply = self.link.request(Message(
            flow="Encrypt", session_id=session_id, msg_type="SR_COMMIT",
            fields={"commitment": commitment}))
        if reply.msg_type == "FLOW_ABORT":
            sr.abort()
            raise_from_abort(reply)
        sr.on_share(reply.field("share"))
        self.link.send(Message(flow="Encrypt", session_id=session_id,
                               msg_type="SR_REVEAL",
                               fields={"preimage": sr.reveal()}))
        return sr, sr.output()

    def _derive_key(self, flow: str, session_id: bytes, tag: bytes,
                    seed: bytes) -> bytes:
        reply = self.link.request(Message(
            flow=flow, session_id=session_id, msg_type="TPRF_REQ",
            fields={"tag": tag, "seed": seed}))
        if reply.msg_type == "FLOW_ABORT":
            raise_from_abort(reply)
        t0 = time.perf_counter()
        blinded = self.group.element_decode(reply.field("blinded"))
        proof = DleqProof.decode(self.group, reply.field("proof"))
        pk = self.group.element_decode(self.state.pk)
        x = prf_input(tag, seed)
        key = tprf_finish(self.group, x, self.state.own_share, pk,
                          blinded, proof)
        self._perf_add("compute", time.perf_counter() - t0)
        return key

    # -- decryption ----------------------------------------------------------------

    def decrypt_flow(self, tag: Optional[bytes] = None,
                     name: Optional[str] = None) -> bytes:
        self._require_enrolled()
        if tag is None and name is None:
            raise UnknownTag("need a tag or a filename")
        session_id = self.rng.randbytes(16)
        if tag is None:
            catalog = self._load_catalog("Decrypt", session_id)
            tag = catalog.resolve(name)
        record = FileRecord.decode(self.cloud.file_get(
            self.state.session_token, tag, flow="Decrypt",
            session_id=session_id))
        key = self._derive_key("Decrypt", session_id, tag, record.seed)
        plaintext = filecrypto.decrypt_file(key, record.body, tag)
        del key
        return plaintext

    # -- refresh ----------------------------------------------------------------

    def refresh_keys(self) -> None:
        """Add a sharing of zero to both key shares and re-deal every
        sub-share; run after each device replacement."""
        with self._state_lock:
            self._require_enrolled()
            session_id = self.rng.randbytes(16)
            new_own, delta = refresh_pair(self.group, self.state.own_share,
                                          self.rng)
            reply = self.link.request(Message(
                flow="Refresh", session_id=session_id,
                msg_type="REFRESH_DELTA",
                fields={"delta": self.group.scalar_encode(delta)}))
            if reply.msg_type == "FLOW_ABORT":
                raise_from_abort(reply)
            self.state.own_share = new_own
            self.state.held_for_peer = self.group.scalar_decode(
                reply.field("sub_share"))
            self.state.pk = reply.field("pk")
            sub_peer, sub_cloud = split_own_share(self.group, new_own,
                                                  self.rng)
            self.state.sub_share_peer = sub_peer
            self.state.sub_share_cloud = sub_cloud
            self.cloud.deposit_share(self.state.session_token, "primary",
                                     sub_cloud)
            self.link.send(Message(
                flow="Refresh", session_id=session_id,
                msg_type="ENROLL_SHARES",
                fields={"sub_share": self.group.scalar_encode(sub_peer),
                        "pk": b""}))
            self.state.epoch += 1

    # -- replacement (migration and recovery) -------------------------------------

    def replace_secondary(self, new_device_id: bytes,
                          claimer: Callable[[str, bytes], None], intent: str,
                          recovery_secret: Optional[str] = None,
                          verify_nonce: Optional[bytes] = None) -> None:
        """Replace the helper device.  ``intent='migrate'`` expects the old
        helper to approve on-screen; ``intent='recover'`` expects it to be
        gone and falls back to identity verification.

        The caller must already have paired this device with the new helper
        (``self.link`` points at it); ``claimer(case_id, claim_secret)``
        makes the new helper collect its vault share and register.
        """
        with self._state_lock:
            self._require_enrolled()
            session_id = self.rng.randbytes(16)
            claim_secret = self.rng.randbytes(16)
            binding = new_device_id + claim_secret
            case_id = self.cloud.recover_request(
                self.state.session_token, intent, "secondary",
                new_device_id, binding, session_id=session_id)
            self._await_case(case_id, intent, recovery_secret, verify_nonce,
                             binding)
            claimer(case_id, claim_secret)
            self.state.peer_device_id = new_device_id
            self.link.send(Message(
                flow="Migrate" if intent == "migrate" else "Recover",
                session_id=session_id, msg_type="SHARE_RELEASE",
                fields={"which": b"\x02",
                        "sub_share": self.group.scalar_encode(
                            self.state.held_for_peer)}))
            self.refresh_keys()

    def adopt_primary_role(self, intent: str,
                           recovery_secret: Optional[str] = None,
                           verify_nonce: Optional[bytes] = None) -> None:
        """Run on a NEW primary device (already paired with the surviving
        helper) to take over from a lost or retiring primary."""
        with self._state_lock:
            if self.state.enrolled:
                raise DuplicateEnrollment("this device already holds a share")
            self.ensure_registered()
            session_id = self.rng.randbytes(16)
            claim_secret = self.rng.randbytes(16)
            binding = self.state.device_id + claim_secret
            case_id = self.cloud.recover_request(
                self.state.session_token, intent, "primary",
                self.state.device_id, binding, session_id=session_id)
            self._await_case(case_id, intent, recovery_secret, verify_nonce,
                             binding)
            released = self.cloud.claim_release(
                self.state.account_id, case_id, self.state.device_id,
                claim_secret)
            self.state.session_token = released["token"]
            reply = self.link.request(Message(
                flow="Migrate" if intent == "migrate" else "Recover",
                session_id=session_id, msg_type="RECOVER_REQ",
                fields={"which": b"\x01",
                        "new_device_id": self.state.device_id,
                        "binding": case_id.encode()}))
            if reply.msg_type == "FLOW_ABORT":
                raise_from_abort(reply)
            sub_peer = self.group.scalar_decode(reply.field("sub_share"))
            self.state.own_share = self.group.scalar_add(
                released["sub_share"], sub_peer)
            self.state.enrolled = True
            self.refresh_keys()

    def _await_case(self, case_id: str, intent: str,
                    recovery_secret: Optional[str],
                    verify_nonce: Optional[bytes], binding: bytes) -> None:
        deadline = time.monotonic() + self.config.case_wait_budget
        while True:
            if self.pump:
                self.pump()
            state = self.cloud.case_state(case_id)
            if state == "approved":
                return
            if state == "denied":
                raise ApprovalDenied("the old device rejected the replacement")
            if state == "responded":
                raise OldDeviceResponded(
                    "the old device is alive; run a migration instead")
            if state == "expired":
                raise OldDeviceUnreachable(
                    "the old device never answered; run a recovery instead")
            if state == "await-verification":
                if recovery_secret is None:
                    raise VerificationFailed(
                        "identity verification required but no proof given")
                nonce = verify_nonce or self.rng.randbytes(16)
                if not self.cloud.verify_identity(
                        self.state.account_id, recovery_secret, nonce,
                        case_id=case_id, binding=binding):
                    raise VerificationFailed("identity verification failed")
                continue
            if time.monotonic() > deadline:
                raise OldDeviceUnreachable("timed out waiting for the case")
            time.sleep(self.config.case_poll_interval)

    # -- trash ----------------------------------------------------------------

    def delete_file(self, name: str) -> None:
        session_id = self.rng.randbytes(16)
        catalog = self._load_catalog("Session", session_id)
        self.cloud.file_delete(self.state.session_token,
                               catalog.resolve(name))

    def undelete_file(self, name: str) -> None:
        session_id = self.rng.randbytes(16)
        catalog = self._load_catalog("Session", session_id)
        self.cloud.file_undelete(self.state.session_token,
                                 catalog.resolve(name))

    # -- misc ----------------------------------------------------------------

    def _require_enrolled(self) -> None:
        if not self.state.enrolled or self.state.invalidated:
            raise ProtocolOrderError("device is not enrolled")
