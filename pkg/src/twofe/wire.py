"""Binary wire format and machine-readable message schema.

Frame layout (device<->device, and the canonical form logged for
device<->cloud calls):

    version(1) | flow(1) | session_id(16) | msg_type(1) | fields...

where each field is a 4-byte big-endian length followed by that many bytes.
Field names, order, and semantic types are defined by MESSAGES below; the
same table is exported to schema/messages.json so other implementations can
interoperate without reading this source.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import EncodingError

WIRE_VERSION = 1
SESSION_ID_LEN = 16

FLOWS = {
    "Enroll": 1,
    "Encrypt": 2,
    "Decrypt": 3,
    "Migrate": 4,
    "Recover": 5,
    "Refresh": 6,
    "Session": 7,
}
FLOW_NAMES = {v: k for k, v in FLOWS.items()}

# msg name -> (type byte, [(field, semantic type), ...])
MESSAGES: dict[str, tuple[int, list[tuple[str, str]]]] = {
    "PAIR_INFO": (1, [("device_id", "bytes16"), ("role", "byte"),
                      ("address", "utf8"), ("catalog_key", "bytes"),
                      ("sas_nonce", "bytes16"), ("ecdh_pub", "element?")]),
    "ENROLL_SHARES": (2, [("sub_share", "scalar"), ("pk", "element?")]),
    "SR_COMMIT": (3, [("commitment", "digest")]),
    "SR_SHARE": (4, [("share", "seed")]),
    "SR_REVEAL": (5, [("preimage", "seed")]),
    "TPRF_REQ": (6, [("tag", "bytes16"), ("seed", "seed")]),
    "TPRF_RESP": (7, [("blinded", "element"), ("proof", "dleq")]),
    "FILE_PUT": (8, [("record", "file-record")]),
    "FILE_GET": (9, [("tag", "bytes16")]),
    "RECOVER_REQ": (10, [("which", "byte"), ("new_device_id", "bytes16"),
                         ("binding", "bytes")]),
    "AUTH_PING": (11, [("request_id", "bytes16"), ("which", "byte"),
                       ("new_device_id", "bytes16"), ("binding", "bytes")]),
    "AUTH_APPROVE": (12, [("request_id", "bytes16"), ("approved", "byte"),
                          ("binding", "bytes")]),
    "SHARE_RELEASE": (13, [("which", "byte"), ("sub_share", "scalar")]),
    "REFRESH_DELTA": (14, [("delta", "scalar")]),
    "SESSION_INVALIDATE": (15, [("target_device_id", "bytes16")]),
    "FLOW_ABORT": (16, [("code", "utf8"), ("detail", "utf8")]),
    "CHANNEL_HELLO": (17, [("nonce", "bytes16"), ("ecdh_pub", "element"),
                           ("mac", "bytes")]),
}
MESSAGE_NAMES = {v[0]: k for k, v in MESSAGES.items()}


@dataclass(frozen=True)
class Message:
    flow: str
    session_id: bytes
    msg_type: str
    fields: dict[str, bytes]

    def field(self, name: str) -> bytes:
        return self.fields[name]


def encode_message(msg: Message) -> bytes:
    if msg.flow not in FLOWS:
        raise EncodingError(f"unknown flow {msg.flow!r}")
    if len(msg.session_id) != SESSION_ID_LEN:
        raise EncodingError("session id must be 16 bytes")
    try:
        type_byte, spec = MESSAGES[msg.msg_type]
    except KeyError:
        raise EncodingError(f"unknown message {msg.msg_type!r}") from None
    out = [bytes([WIRE_VERSION, FLOWS[msg.flow]]), msg.session_id,
           bytes([type_byte])]
    for name, _sem in spec:
        try:
            value = msg.fields[name]
        except KeyError:
            raise EncodingError(
                f"{msg.msg_type} missing field {name!r}") from None
        out.append(len(value).to_bytes(4, "big"))
        out.append(value)
    return b"".join(out)


def decode_message(data: bytes) -> Message:
    if len(data) < 2 + SESSION_ID_LEN + 1:
        raise EncodingError("frame too short")
    if data[0] != WIRE_VERSION:
        raise EncodingError(f"unsupported wire version {data[0]}")
    flow = FLOW_NAMES.get(data[1])
    if flow is None:
        raise EncodingError(f"unknown flow byte {data[1]}")
    session_id = data[2:2 + SESSION_ID_LEN]
    type_byte = data[2 + SESSION_ID_LEN]
    name = MESSAGE_NAMES.get(type_byte)
    if name is None:
        raise EncodingError(f"unknown message type byte {type_byte}")
    pos = 3 + SESSION_ID_LEN
    fields = {}
    for fname, _sem in MESSAGES[name][1]:
        if pos + 4 > len(data):
            raise EncodingError(f"truncated field {fname!r}")
        flen = int.from_bytes(data[pos:pos + 4], "big")
        pos += 4
        if pos + flen > len(data):
            raise EncodingError(f"truncated field {fname!r}")
        fields[fname] = data[pos:pos + flen]
        pos += flen
    if pos != len(data):
        raise EncodingError("trailing bytes after last field")
    return Message(flow=flow, session_id=session_id, msg_type=name,
                   fields=fields)


def schema_dict() -> dict:
    """The schema as shipped in schema/messages.json."""
    return {
        "wire_version": WIRE_VERSION,
        "frame": ["version:1", "flow:1", f"session_id:{SESSION_ID_LEN}",
                  "msg_type:1", "fields: 4-byte BE length prefix each"],
        "flows": FLOWS,
        "messages": {
            name: {"type_byte": tb,
                   "fields": [{"name": f, "type": sem} for f, sem in spec]}
            for name, (tb, spec) in MESSAGES.items()
        },
    }


def write_schema(path) -> None:
    with open(path, "w") as fh:
        json.dump(schema_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
