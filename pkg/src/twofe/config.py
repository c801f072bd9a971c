"""Key-value config files for the device agents.

Format: one ``key = value`` per line, ``#`` comments.  Recognized keys:

    account          account identifier at the cloud
    device_id        32 hex chars (generated on first run when absent)
    role             primary | secondary
    peer             host:port of the helper's protocol listener
    cloud            base URL of the cloud service
    listen           host:port the daemon's protocol listener binds
    console          host:port of the daemon's loopback console API
    console_token    pairing token for the console (generated if absent)
    policy           auto | notify | prompt
    approval_window  seconds during which a re-decrypt skips the prompt
    state            path of the device state file (TWOFE_STATE overrides)
    cloud_ca         pinned certificate (PEM) when cloud is an https URL
    policy.<prefix>  per-folder policy override, e.g. policy.tax/ = prompt
"""

from __future__ import annotations

import os
import secrets
from dataclasses import dataclass, field
from typing import Optional

from .agents import MODES, ApprovalPolicy
from .errors import EncodingError


@dataclass
class DeviceConfig:
    account: str = "default"
    device_id: bytes = b""
    role: str = "primary"
    peer: str = "127.0.0.1:7707"
    cloud: str = "http://127.0.0.1:7800"
    cloud_ca: str = ""
    listen: str = "127.0.0.1:7707"
    console: str = "127.0.0.1:7770"
    console_token: str = ""
    policy: str = "notify"
    approval_window: float = 30.0
    state: str = ""
    folder_overrides: dict[str, str] = field(default_factory=dict)

    def approval_policy(self) -> ApprovalPolicy:
        return ApprovalPolicy(mode=self.policy,
                              folder_overrides=dict(self.folder_overrides),
                              approval_window=self.approval_window)

    def state_path(self) -> str:
        path = os.environ.get("TWOFE_STATE") or self.state
        if not path:
            path = os.path.expanduser(f"~/.twofe/{self.role}.state")
        return os.path.expanduser(path)


def parse_config(text: str) -> DeviceConfig:
    cfg = DeviceConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise EncodingError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("policy."):
            prefix = key[len("policy."):]
            if value not in MODES:
                raise EncodingError(f"config line {lineno}: bad mode {value!r}")
            cfg.folder_overrides[prefix] = value
        elif key == "device_id":
            cfg.device_id = bytes.fromhex(value)
        elif key == "approval_window":
            cfg.approval_window = float(value)
        elif key == "policy":
            if value not in MODES:
                raise EncodingError(f"config line {lineno}: bad mode {value!r}")
            cfg.policy = value
        elif hasattr(cfg, key):
            setattr(cfg, key, value)
        else:
            raise EncodingError(f"config line {lineno}: unknown key {key!r}")
    if not cfg.device_id:
        cfg.device_id = secrets.token_bytes(16)
    if not cfg.console_token:
        cfg.console_token = secrets.token_hex(16)
    return cfg


def load_config(path: Optional[str]) -> DeviceConfig:
    if path is None:
        return parse_config("")
    with open(path) as fh:
        return parse_config(fh.read())


def split_hostport(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    return host or "127.0.0.1", int(port)
