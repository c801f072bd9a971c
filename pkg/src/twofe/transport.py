"""Channels between the two devices, plus per-device wire logs.

Two channel kinds exist: an in-process pair backed by queues (tests,
scenarios, benchmarks) and a length-prefixed TCP stream (the real daemon).
Every frame a device sends or receives is mirrored into its WireLog, which
the threat scenarios and the benchmark message-count assertions read.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import PeerUnreachable
from .wire import Message, decode_message, encode_message


@dataclass
class WireEntry:
    direction: str          # "send" | "recv"
    peer: str               # "secondary", "primary", "cloud"
    message: Message
    at: float = field(default_factory=time.monotonic)


class WireLog:
    def __init__(self):
        self.entries: list[WireEntry] = []
        self._lock = threading.Lock()

    def record(self, direction: str, peer: str, message: Message) -> None:
        with self._lock:
            self.entries.append(WireEntry(direction, peer, message))

    def sent(self, msg_type: Optional[str] = None) -> list[WireEntry]:
        return [e for e in self.entries if e.direction == "send"
                and (msg_type is None or e.message.msg_type == msg_type)]

    def received(self, msg_type: Optional[str] = None) -> list[WireEntry]:
        return [e for e in self.entries if e.direction == "recv"
                and (msg_type is None or e.message.msg_type == msg_type)]

    def clear(self) -> None:
        with self._lock:
            self.entries.clear()


class Channel:
    """Bidirectional byte-frame pipe; send/recv work on whole frames."""

    def send(self, data: bytes) -> None:
        raise NotImplementedError

    def recv(self, timeout: Optional[float] = None) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcChannel(Channel):
    def __init__(self, inbox: "queue.Queue[bytes]", outbox: "queue.Queue[bytes]"):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    @classmethod
    def pair(cls) -> tuple["InProcChannel", "InProcChannel"]:
        a: queue.Queue[bytes] = queue.Queue()
        b: queue.Queue[bytes] = queue.Queue()
        return cls(a, b), cls(b, a)

    def send(self, data: bytes) -> None:
        if self._closed:
            raise PeerUnreachable("channel closed")
        self._outbox.put(data)

    def recv(self, timeout: Optional[float] = None) -> bytes:
        try:
            return self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise PeerUnreachable("peer did not answer in time") from None

    def close(self) -> None:
        self._closed = True


SECURE_MAGIC = 0x02


def _channel_hash(domain: bytes, parts: list[bytes]) -> bytes:
    import hashlib

    from .group import frame

    return hashlib.sha256(frame(domain, parts)).digest()


def derive_channel_keys(base_secret: bytes, am_primary: bool
                        ) -> tuple[bytes, bytes]:
    """(send_key, recv_key) for this side; one AEAD key per direction."""
    k_p2s = _channel_hash(b"2FE-CHANNEL", [base_secret, b"p2s"])
    k_s2p = _channel_hash(b"2FE-CHANNEL", [base_secret, b"s2p"])
    return (k_p2s, k_s2p) if am_primary else (k_s2p, k_p2s)


class FrameCrypto:
    """Per-direction AEAD framing with strictly increasing counters: the
    transport itself rejects replayed, reordered, or tampered frames.

    Frames are `0x02 | counter(8 BE) | ciphertext`.
    """

    def __init__(self, send_key: bytes, recv_key: bytes):
        from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

        self._send = ChaCha20Poly1305(send_key)
        self._recv = ChaCha20Poly1305(recv_key)
        self._send_counter = 0
        self._recv_counter = 0

    def seal(self, data: bytes) -> bytes:
        counter = self._send_counter
        self._send_counter += 1
        ct = self._send.encrypt(counter.to_bytes(12, "big"), data,
                                b"2FE-CHANNEL-FRAME")
        return bytes([SECURE_MAGIC]) + counter.to_bytes(8, "big") + ct

    def open(self, wire: bytes) -> bytes:
        from cryptography.exceptions import InvalidTag

        if len(wire) < 9 or wire[0] != SECURE_MAGIC:
            raise PeerUnreachable("expected a protected channel frame")
        counter = int.from_bytes(wire[1:9], "big")
        if counter < self._recv_counter:
            raise PeerUnreachable("replayed channel frame")
        try:
            data = self._recv.decrypt(counter.to_bytes(12, "big"), wire[9:],
                                      b"2FE-CHANNEL-FRAME")
        except InvalidTag:
            raise PeerUnreachable("channel frame failed authentication") \
                from None
        self._recv_counter = counter + 1
        return data


class SecureChannel(Channel):
    def __init__(self, inner: Channel, send_key: bytes, recv_key: bytes):
        self.inner = inner
        self._crypto = FrameCrypto(send_key, recv_key)

    def send(self, data: bytes) -> None:
        self.inner.send(self._crypto.seal(data))

    def recv(self, timeout: Optional[float] = None) -> bytes:
        return self._crypto.open(self.inner.recv(timeout))

    def close(self) -> None:
        self.inner.close()


def handshake_hello_mac(psk: bytes, nonce_c: bytes, pub_c: bytes,
                        nonce_s: bytes, pub_s: bytes) -> bytes:
    return _channel_hash(b"2FE-CHANNEL-AUTH",
                         [psk, nonce_c, pub_c, nonce_s, pub_s])


def handshake_session_keys(psk: bytes, dh_shared: bytes, nonce_c: bytes,
                           nonce_s: bytes, am_primary: bool
                           ) -> tuple[bytes, bytes]:
    base = _channel_hash(b"2FE-CHANNEL-KEYS",
                         [psk, dh_shared, nonce_c, nonce_s])
    return derive_channel_keys(base, am_primary)


def client_handshake(channel: Channel, group, psk: bytes, rng,
                     timeout: float = 10.0) -> SecureChannel:
    """Connection setup from the primary: fresh ECDH authenticated by the
    pairing key, so every connection gets its own channel keys and the
    server proves it holds the pairing secret before anything flows."""
    import hmac as hmac_mod

    e = group.scalar_random(rng)
    pub_c = group.base_mult(e).encoding
    nonce_c = rng.randbytes(16)
    hello = Message(flow="Session", session_id=b"\x00" * 16,
                    msg_type="CHANNEL_HELLO",
                    fields={"nonce": nonce_c, "ecdh_pub": pub_c, "mac": b""})
    channel.send(encode_message(hello))
    reply = decode_message(channel.recv(timeout=timeout))
    if reply.msg_type != "CHANNEL_HELLO":
        raise PeerUnreachable("peer did not complete the channel handshake")
    nonce_s = reply.field("nonce")
    pub_s = reply.field("ecdh_pub")
    expected = handshake_hello_mac(psk, nonce_c, pub_c, nonce_s, pub_s)
    if not hmac_mod.compare_digest(expected, reply.field("mac")):
        raise PeerUnreachable("channel authentication failed: the helper "
                              "does not hold this pairing's key")
    shared = group.scalar_mult(e, group.element_decode(pub_s)).encoding
    send_key, recv_key = handshake_session_keys(psk, shared, nonce_c,
                                                nonce_s, am_primary=True)
    return SecureChannel(channel, send_key, recv_key)


class TcpChannel(Channel):
    """4-byte big-endian length prefix per frame over a connected socket."""

    def __init__(self, sock: socket.socket):
        self._sock = sock

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 5.0) -> "TcpChannel":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise PeerUnreachable(f"cannot reach {host}:{port}: {exc}") from None
        return cls(sock)

    def send(self, data: bytes) -> None:
        try:
            self._sock.sendall(struct.pack(">I", len(data)) + data)
        except OSError as exc:
            raise PeerUnreachable(str(exc)) from None

    def recv(self, timeout: Optional[float] = None) -> bytes:
        self._sock.settimeout(timeout)
        try:
            header = self._recv_exact(4)
            (n,) = struct.unpack(">I", header)
            return self._recv_exact(n)
        except OSError as exc:
            raise PeerUnreachable(str(exc)) from None

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        while n:
            chunk = self._sock.recv(n)
            if not chunk:
                raise PeerUnreachable("peer closed the connection")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class PeerLink:
    """Message-level wrapper the primary uses to talk to its helper: encodes,
    logs, and pairs requests with same-session replies.

    Concurrent sessions may share one link: frames for another session are
    parked, not dropped, and each waiter collects its own."""

    def __init__(self, channel: Channel, log: WireLog, peer_name: str,
                 timeout: float = 30.0):
        self.channel = channel
        self.log = log
        self.peer_name = peer_name
        self.timeout = timeout
        self._parked: dict[bytes, list[Message]] = {}
        self._park_lock = threading.Lock()
        self._recv_lock = threading.Lock()

    def send(self, msg: Message) -> None:
        self.log.record("send", self.peer_name, msg)
        self.channel.send(encode_message(msg))

    def request(self, msg: Message) -> Message:
        self.send(msg)
        return self.wait(msg.session_id)

    def _take_parked(self, session_id: bytes) -> Optional[Message]:
        with self._park_lock:
            queue_ = self._parked.get(session_id)
            if queue_:
                msg = queue_.pop(0)
                if not queue_:
                    del self._parked[session_id]
                return msg
        return None

    def wait(self, session_id: bytes) -> Message:
        deadline = time.monotonic() + self.timeout
        while True:
            parked = self._take_parked(session_id)
            if parked is not None:
                return parked
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise PeerUnreachable("timed out waiting for peer reply")
            # one thread reads the channel at a time; the others poll the
            # parking area where the reader routes their frames
            if not self._recv_lock.acquire(timeout=min(remaining, 0.02)):
                continue
            try:
                parked = self._take_parked(session_id)
                if parked is not None:
                    return parked
                try:
                    reply_raw = self.channel.recv(
                        timeout=min(remaining, 0.25))
                except PeerUnreachable:
                    continue
                reply = decode_message(reply_raw)
                self.log.record("recv", self.peer_name, reply)
                if reply.session_id == session_id:
                    return reply
                with self._park_lock:
                    self._parked.setdefault(reply.session_id,
                                            []).append(reply)
            finally:
                self._recv_lock.release()


class SyncLink(PeerLink):
    """Deterministic in-process link: requests invoke the helper's handler
    directly, no threads involved.  Scenarios and most tests run on this."""

    def __init__(self, handler: Callable[[Message], list[Message]],
                 log: WireLog, peer_name: str = "secondary"):
        self.handler = handler
        self.log = log
        self.peer_name = peer_name
        self.timeout = 30.0
        self._pending: list[Message] = []

    def send(self, msg: Message) -> None:
        self.log.record("send", self.peer_name, msg)
        # encode/decode round-trip keeps the wire format honest
        replies = self.handler(decode_message(encode_message(msg)))
        self._pending.extend(replies)

    def request(self, msg: Message) -> Message:
        self.send(msg)
        return self.wait(msg.session_id)

    def wait(self, session_id: bytes) -> Message:
        for i, reply in enumerate(self._pending):
            if reply.session_id == session_id:
                self.log.record("recv", self.peer_name, reply)
                del self._pending[i]
                return reply
        raise PeerUnreachable("helper produced no reply")


class ChannelServer:
    """Runs a handler loop over one connection (helper side).

    When constructed with a device, the connection speaks the protected
    framing: an incoming CHANNEL_HELLO (plaintext) performs the
    PSK-authenticated handshake, a completed pairing upgrades the link in
    place, and any other plaintext frame from a paired peer is dropped.
    """

    def __init__(self, channel: Channel, handler: Callable[[Message], list[Message]],
                 log: WireLog, peer_name: str = "primary", device=None):
        self.channel = channel
        self.handler = handler
        self.log = log
        self.peer_name = peer_name
        self.device = device
        self._crypto: Optional[FrameCrypto] = None
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _send(self, data: bytes) -> None:
        if self._crypto is not None:
            data = self._crypto.seal(data)
        self.channel.send(data)

    def _handle_hello(self, msg: Message) -> None:
        psk = self.device.state.channel_key if self.device else b""
        if not psk:
            return  # nothing to authenticate against; ignore
        group = self.device.group
        rng = self.device.rng
        e = group.scalar_random(rng)
        pub_s = group.base_mult(e).encoding
        nonce_s = rng.randbytes(16)
        nonce_c = msg.field("nonce")
        pub_c = msg.field("ecdh_pub")
        mac = handshake_hello_mac(psk, nonce_c, pub_c, nonce_s, pub_s)
        reply = Message(flow="Session", session_id=msg.session_id,
                        msg_type="CHANNEL_HELLO",
                        fields={"nonce": nonce_s, "ecdh_pub": pub_s,
                                "mac": mac})
        self.channel.send(encode_message(reply))
        shared = group.scalar_mult(e, group.element_decode(pub_c)).encoding
        send_key, recv_key = handshake_session_keys(
            psk, shared, nonce_c, nonce_s, am_primary=False)
        self._crypto = FrameCrypto(send_key, recv_key)

    def _loop(self) -> None:
        while not self._stop.is_set():
            try:
                frame = self.channel.recv(timeout=0.2)
            except PeerUnreachable:
                continue
            plaintext = not (frame and frame[0] == SECURE_MAGIC)
            if not plaintext:
                if self._crypto is None:
                    continue  # protected frame before any handshake
                try:
                    frame = self._crypto.open(frame)
                except PeerUnreachable:
                    return  # broken channel state: drop the connection
            try:
                msg = decode_message(frame)
            except Exception:
                continue
            if plaintext:
                if msg.msg_type == "CHANNEL_HELLO":
                    try:
                        self._handle_hello(msg)
                    except Exception:
                        return
                    continue
                paired = bool(self.device
                              and self.device.state.channel_key)
                if msg.msg_type != "PAIR_INFO" and (paired or self._crypto):
                    continue  # no plaintext protocol once keys exist
                if msg.msg_type == "PAIR_INFO" \
                        and not msg.fields.get("ecdh_pub"):
                    continue  # catalog rounds travel encrypted only
            self.log.record("recv", self.peer_name, msg)
            try:
                replies = self.handler(msg)
            except Exception:
                continue
            for reply in replies:
                self.log.record("send", self.peer_name, reply)
                try:
                    self._send(encode_message(reply))
                except PeerUnreachable:
                    return
            # a completed pairing round upgrades this connection in place
            if self.device is not None:
                keys = self.device.take_pending_channel_keys()
                if keys:
                    self._crypto = FrameCrypto(*keys)

    def stop(self) -> None:
        self._stop.set()
        if self._thread:
            self._thread.join(timeout=2)
