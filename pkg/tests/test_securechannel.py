"""Device-channel protection: per-connection keys from the pairing PSK,
transport-level replay/tamper rejection, and no sensitive bytes on the
wire after the pairing key round."""

import socket

import pytest

from twofe.cloud import CloudService
from twofe.deploy import Deployment
from twofe.engine import (
    CloudClient,
    PrimaryDevice,
    SecondaryDevice,
    sas_code,
)
from twofe.errors import PeerUnreachable
from twofe.group import production_group, seeded_rng
from twofe.state import DeviceState
from twofe.transport import (
    ChannelServer,
    Channel,
    FrameCrypto,
    InProcChannel,
    PeerLink,
    TcpChannel,
    client_handshake,
    derive_channel_keys,
)

GROUP = production_group()


class TestFrameCrypto:
    def _pair(self):
        a_send, a_recv = derive_channel_keys(b"\x11" * 32, am_primary=True)
        b_send, b_recv = derive_channel_keys(b"\x11" * 32, am_primary=False)
        assert a_send == b_recv and a_recv == b_send
        return FrameCrypto(a_send, a_recv), FrameCrypto(b_send, b_recv)

    def test_roundtrip(self):
        a, b = self._pair()
        for payload in (b"", b"x", b"frame" * 1000):
            assert b.open(a.seal(payload)) == payload

    def test_replay_rejected(self):
        a, b = self._pair()
        wire = a.seal(b"once")
        assert b.open(wire) == b"once"
        with pytest.raises(PeerUnreachable):
            b.open(wire)

    def test_tamper_rejected(self):
        a, b = self._pair()
        wire = bytearray(a.seal(b"payload"))
        wire[-1] ^= 1
        with pytest.raises(PeerUnreachable):
            b.open(bytes(wire))

    def test_plaintext_frame_rejected(self):
        _a, b = self._pair()
        with pytest.raises(PeerUnreachable):
            b.open(b"\x01not encrypted")

    def test_direction_keys_differ(self):
        send, recv = derive_channel_keys(b"\x22" * 32, am_primary=True)
        assert send != recv


class TapChannel(Channel):
    """Wraps a channel and records every raw frame that crosses it."""

    def __init__(self, inner: Channel, taps: list):
        self.inner = inner
        self.taps = taps

    def send(self, data: bytes) -> None:
        self.taps.append(data)
        self.inner.send(data)

    def recv(self, timeout=None) -> bytes:
        data = self.inner.recv(timeout)
        self.taps.append(data)
        return data

    def close(self) -> None:
        self.inner.close()


def _tcp_pair():
    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)
    client = socket.create_connection(("127.0.0.1",
                                       listener.getsockname()[1]))
    server, _ = listener.accept()
    listener.close()
    return TcpChannel(client), TcpChannel(server)


def _stack(policy=None):
    from twofe.transport import WireLog

    cloud = CloudService(rng=seeded_rng(1))
    sec_state = DeviceState(role="secondary", device_id=b"\x02" * 16,
                            account_id="eve-proof")
    secondary = SecondaryDevice(GROUP, sec_state,
                                CloudClient(cloud, WireLog()), "pw",
                                rng=seeded_rng(2))
    pri_state = DeviceState(role="primary", device_id=b"\x01" * 16,
                            account_id="eve-proof")
    primary = PrimaryDevice(GROUP, pri_state,
                            CloudClient(cloud, WireLog()), "pw",
                            rng=seeded_rng(3))
    return cloud, primary, secondary


class TestWireConfidentiality:
    def test_everything_after_the_key_round_is_sealed(self):
        _cloud, primary, secondary = _stack()
        client_ch, server_ch = _tcp_pair()
        taps: list[bytes] = []
        from twofe.transport import WireLog

        server = ChannelServer(server_ch, secondary.handle, WireLog(),
                               device=secondary)
        server.start()
        primary.link = PeerLink(TapChannel(client_ch, taps), WireLog(),
                                "secondary", timeout=10)
        primary.pair()
        primary.enroll("recovery words")
        marker = b"CONTENT-THAT-MUST-NEVER-CROSS-IN-CLEAR"
        primary.encrypt_flow(marker * 3, "cleartext-check.txt")
        primary.decrypt_flow(name="cleartext-check.txt")
        server.stop()

        # the first exchange is the pairing key round; all later frames are
        # protected
        plaintext_frames = [f for f in taps if f and f[0] == 0x01]
        assert len(plaintext_frames) == 2
        sealed = [f for f in taps if f and f[0] == 0x02]
        assert len(sealed) >= 10
        raw = b"".join(taps)
        assert marker not in raw
        assert primary.state.catalog_key not in raw
        assert b"cleartext-check" not in raw

    def test_fresh_connection_requires_the_pairing_key(self):
        _cloud, primary, secondary = _stack()
        client_ch, server_ch = _tcp_pair()
        from twofe.transport import WireLog

        server = ChannelServer(server_ch, secondary.handle, WireLog(),
                               device=secondary)
        server.start()
        primary.link = PeerLink(client_ch, WireLog(), "secondary",
                                timeout=10)
        primary.pair()
        primary.enroll("recovery words")
        server.stop()
        client_ch.close()

        # reconnect with the right PSK: works
        client2, server2 = _tcp_pair()
        server = ChannelServer(server2, secondary.handle, WireLog(),
                               device=secondary)
        server.start()
        secure = client_handshake(client2, GROUP,
                                  primary.state.channel_key, seeded_rng(9))
        primary.link = PeerLink(secure, WireLog(), "secondary", timeout=10)
        tag = primary.encrypt_flow(b"after reconnect", "r.txt")
        assert primary.decrypt_flow(tag=tag) == b"after reconnect"
        server.stop()
        client2.close()

        # wrong PSK: the helper's hello MAC does not verify
        client3, server3 = _tcp_pair()
        server = ChannelServer(server3, secondary.handle, WireLog(),
                               device=secondary)
        server.start()
        with pytest.raises(PeerUnreachable):
            client_handshake(client3, GROUP, b"\x00" * 32, seeded_rng(10))
        server.stop()
        client3.close()

    def test_paired_helper_ignores_plaintext_protocol(self):
        _cloud, primary, secondary = _stack()
        client_ch, server_ch = _tcp_pair()
        from twofe.transport import WireLog
        from twofe.wire import Message, encode_message

        server = ChannelServer(server_ch, secondary.handle, WireLog(),
                               device=secondary)
        server.start()
        primary.link = PeerLink(client_ch, WireLog(), "secondary",
                                timeout=10)
        primary.pair()
        primary.enroll("recovery words")
        server.stop()
        client_ch.close()

        # attacker connects and speaks plaintext: no response at all, and
        # a plaintext catalog-round probe gets nothing either
        attacker, server4 = _tcp_pair()
        server = ChannelServer(server4, secondary.handle, WireLog(),
                               device=secondary)
        server.start()
        attacker.send(encode_message(Message(
            flow="Decrypt", session_id=b"\x05" * 16, msg_type="TPRF_REQ",
            fields={"tag": b"\x01" * 16, "seed": b"\x02" * 32})))
        attacker.send(encode_message(Message(
            flow="Enroll", session_id=b"\x06" * 16, msg_type="PAIR_INFO",
            fields={"device_id": b"\x66" * 16, "role": b"\x01",
                    "address": b"", "catalog_key": b"",
                    "sas_nonce": b"\x07" * 16, "ecdh_pub": b""})))
        with pytest.raises(PeerUnreachable):
            attacker.recv(timeout=0.6)
        server.stop()
        attacker.close()


class TestSas:
    def test_sas_covers_the_key_exchange(self):
        base = sas_code(b"\x01" * 16, b"\x02" * 16, b"\x03" * 16,
                        b"\x04" * 16, b"\x05" * 32, b"\x06" * 32)
        swapped = sas_code(b"\x01" * 16, b"\x02" * 16, b"\x03" * 16,
                           b"\x04" * 16, b"\x07" * 32, b"\x06" * 32)
        assert base != swapped

    def test_both_screens_show_the_same_code(self):
        dep = Deployment(seed=77)
        code = dep.primary.pair()
        assert code == dep.secondary.last_sas
        assert len(code) == 6 and code.isdigit()
