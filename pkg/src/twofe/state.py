"""Device state file: the versioned binary record holding a device's share
material, catalog key, and session token.

CLI invocations are independent processes sharing this file, so reads and
writes go through an advisory file lock.  A field is reserved for a future
at-rest wrapping key (OS keystore integration is out of scope here).
"""

from __future__ import annotations

import io
import os
from contextlib import contextmanager
from dataclasses import dataclass

from .errors import EncodingError

STATE_VERSION = 1
_ROLES = {"primary": 1, "secondary": 2}
_ROLE_NAMES = {v: k for k, v in _ROLES.items()}


def _put(buf: io.BytesIO, data: bytes) -> None:
    buf.write(len(data).to_bytes(4, "big"))
    buf.write(data)


def _take(buf: io.BytesIO) -> bytes:
    n = int.from_bytes(buf.read(4), "big")
    data = buf.read(n)
    if len(data) != n:
        raise EncodingError("truncated state file")
    return data


@dataclass
class DeviceState:
    role: str
    device_id: bytes
    account_id: str = ""
    peer_device_id: bytes = b""
    own_share: int = 0
    sub_share_peer: int = 0      # the piece of own_share dealt to the peer
    sub_share_cloud: int = 0     # the piece of own_share parked in the vault
    held_for_peer: int = 0       # the peer's sub-share this device safekeeps
    pk: bytes = b""              # enrolled helper public key (primary only)
    catalog_key: bytes = b""
    channel_key: bytes = b""    # long-lived device-channel key from pairing
    session_token: bytes = b""
    epoch: int = 0
    wrapping_key: bytes = b""    # reserved; always empty for now
    enrolled: bool = False
    invalidated: bool = False

    def serialize(self) -> bytes:
        buf = io.BytesIO()
        buf.write(bytes([STATE_VERSION, _ROLES[self.role]]))
        _put(buf, self.device_id)
        _put(buf, self.account_id.encode())
        _put(buf, self.peer_device_id)
        _put(buf, self.own_share.to_bytes(32, "big"))
        _put(buf, self.sub_share_peer.to_bytes(32, "big"))
        _put(buf, self.sub_share_cloud.to_bytes(32, "big"))
        _put(buf, self.held_for_peer.to_bytes(32, "big"))
        _put(buf, self.pk)
        _put(buf, self.catalog_key)
        _put(buf, self.channel_key)
        _put(buf, self.session_token)
        buf.write(self.epoch.to_bytes(4, "big"))
        _put(buf, self.wrapping_key)
        buf.write(bytes([self.enrolled, self.invalidated]))
        return buf.getvalue()

    @classmethod
    def deserialize(cls, data: bytes) -> "DeviceState":
        buf = io.BytesIO(data)
        head = buf.read(2)
        if len(head) != 2 or head[0] != STATE_VERSION:
            raise EncodingError("unsupported state file version")
        role = _ROLE_NAMES.get(head[1])
        if role is None:
            raise EncodingError("bad role byte in state file")
        st = cls(role=role, device_id=_take(buf))
        st.account_id = _take(buf).decode()
        st.peer_device_id = _take(buf)
        st.own_share = int.from_bytes(_take(buf), "big")
        st.sub_share_peer = int.from_bytes(_take(buf), "big")
        st.sub_share_cloud = int.from_bytes(_take(buf), "big")
        st.held_for_peer = int.from_bytes(_take(buf), "big")
        st.pk = _take(buf)
        st.catalog_key = _take(buf)
        st.channel_key = _take(buf)
        st.session_token = _take(buf)
        st.epoch = int.from_bytes(buf.read(4), "big")
        st.wrapping_key = _take(buf)
        flags = buf.read(2)
        if len(flags) != 2:
            raise EncodingError("truncated state file")
        st.enrolled, st.invalidated = bool(flags[0]), bool(flags[1])
        return st

    def wipe_shares(self) -> None:
        """Invalidate share material after this device has been replaced."""
        self.own_share = 0
        self.sub_share_peer = 0
        self.sub_share_cloud = 0
        self.held_for_peer = 0
        self.channel_key = b""
        self.session_token = b""
        self.enrolled = False
        self.invalidated = True


@contextmanager
def _locked(path: str, mode: str):
    import fcntl

    fh = open(path, mode)
    try:
        fcntl.flock(fh.fileno(), fcntl.LOCK_EX)
        yield fh
    finally:
        fcntl.flock(fh.fileno(), fcntl.LOCK_UN)
        fh.close()


def save_state(state: DeviceState, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(state.serialize())
    os.replace(tmp, path)


def load_state(path: str) -> DeviceState:
    with _locked(path, "rb") as fh:
        return DeviceState.deserialize(fh.read())


def state_path_from_env(default: str) -> str:
    return os.environ.get("TWOFE_STATE", default)
