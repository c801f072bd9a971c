"""The untrusted storage server.

Holds ciphertexts, the recovery vault (one sub-share per device plus a
wrapped catalog-key copy), session tokens, a 30-day trash bin, and the
out-of-band identity-verification stub that gates share release when a
device is gone.  Nothing here can decrypt anything: the vault sub-shares
are each one half of a fresh 2-of-2 sharing.

Persistence is an append-only journal plus snapshots; file bodies live in a
pluggable blob store keyed by tag.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import (
    AlreadyDecided,
    ApprovalDenied,
    BadToken,
    DuplicateEnrollment,
    OldDeviceResponded,
    OldDeviceUnreachable,
    RecoveryLocked,
    TagExists,
    UnknownAccount,
    UnknownTag,
    VerificationFailed,
)
from .filecrypto import CATALOG_TAG, FileRecord
from .group import Rng

TRASH_RETENTION = 30 * 24 * 3600.0
TOKEN_LIFETIME = 30 * 24 * 3600.0
VERIFY_MAX_FAILURES = 3
VERIFY_COOLDOWN = 3600.0
DEFAULT_PING_TIMEOUT = 60.0

ROLE_BYTES = {"primary": b"\x01", "secondary": b"\x02"}


def _scrypt(secret: str, salt: bytes) -> bytes:
    return hashlib.scrypt(secret.encode(), salt=salt, n=16384, r=8, p=1,
                          dklen=32)


# ---------------------------------------------------------------------------
# blob storage backends


class StorageBackend:
    """Where ciphertext bodies live; keys are opaque strings."""

    def put(self, key: str, data: bytes) -> None:
        raise NotImplementedError

    def get(self, key: str) -> bytes:
        raise NotImplementedError

    def delete(self, key: str) -> None:
        raise NotImplementedError


class MemoryStore(StorageBackend):
    def __init__(self):
        self.blobs: dict[str, bytes] = {}

    def put(self, key, data):
        self.blobs[key] = data

    def get(self, key):
        return self.blobs[key]

    def delete(self, key):
        self.blobs.pop(key, None)


class LocalDirStore(StorageBackend):
    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)

    def _path(self, key: str) -> str:
        return os.path.join(self.root, key)

    def put(self, key, data):
        tmp = self._path(key) + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, self._path(key))

    def get(self, key):
        with open(self._path(key), "rb") as fh:
            return fh.read()

    def delete(self, key):
        try:
            os.unlink(self._path(key))
        except FileNotFoundError:
            pass


class ExternalBlobAdapter(StorageBackend):
    """Pass-through to an external provider (the prototype pattern of
    parking ciphertext on a plain storage service).  Callers hand in the
    provider's fetch/store/remove callables; tests use mocks."""

    def __init__(self, store_fn: Callable[[str, bytes], None],
                 fetch_fn: Callable[[str], bytes],
                 remove_fn: Callable[[str], None]):
        self._store = store_fn
        self._fetch = fetch_fn
        self._remove = remove_fn

    def put(self, key, data):
        self._store(key, data)

    def get(self, key):
        return self._fetch(key)

    def delete(self, key):
        self._remove(key)


# ---------------------------------------------------------------------------
# records


@dataclass
class DeviceEntry:
    device_id: bytes
    role: str
    address: str = ""
    token: bytes = b""
    token_expiry: float = 0.0
    invalidated: bool = False


@dataclass
class StoredFile:
    tag: bytes
    seed: bytes
    uploaded_at: float
    deleted_at: Optional[float] = None
    size: int = 0


@dataclass
class RecoveryCase:
    case_id: str
    account_id: str
    intent: str                  # "migrate" | "recover"
    which: str                   # role being replaced
    new_device_id: bytes
    binding: bytes
    state: str                   # pinging, approved, denied, responded,
    created_at: float = 0.0      # await-verification, expired, released
    old_device_id: bytes = b""


@dataclass
class AccountRecord:
    account_id: str
    cred_salt: bytes
    cred_hash: bytes
    recovery_salt: bytes
    recovery_hash: bytes
    devices: dict[bytes, DeviceEntry] = field(default_factory=dict)
    vault: dict[str, int] = field(default_factory=dict)   # role -> sub-share
    catalog_key_wrapped: bytes = b""
    files: dict[bytes, StoredFile] = field(default_factory=dict)
    verify_failures: int = 0
    verify_locked_until: float = 0.0
    used_nonces: set = field(default_factory=set)


# ---------------------------------------------------------------------------
# the service


class CloudService:
    def __init__(self, storage: Optional[StorageBackend] = None,
                 persist_dir: Optional[str] = None,
                 clock: Callable[[], float] = time.time,
                 rng: Optional[Rng] = None,
                 ping_timeout: float = DEFAULT_PING_TIMEOUT):
        self.clock = clock
        self.rng = rng or Rng()
        self.ping_timeout = ping_timeout
        self.accounts: dict[str, AccountRecord] = {}
        self.cases: dict[str, RecoveryCase] = {}
        self.pings: dict[bytes, list[str]] = {}      # device -> case ids
        self.releases: list[tuple[str, str]] = []    # (case_id, which)
        self._lock = threading.RLock()
        self.persist_dir = persist_dir
        self._journal_fh = None
        self._seq = 0
        if persist_dir:
            os.makedirs(persist_dir, exist_ok=True)
            self.storage = storage or LocalDirStore(
                os.path.join(persist_dir, "blobs"))
            self._load()
            self._journal_fh = open(
                os.path.join(persist_dir, "journal.jsonl"), "a")
        else:
            self.storage = storage or MemoryStore()

    # -- auth helpers --------------------------------------------------------

    def _account(self, account_id: str) -> AccountRecord:
        try:
            return self.accounts[account_id]
        except KeyError:
            raise UnknownAccount(account_id) from None

    def _auth(self, token: bytes) -> tuple[AccountRecord, DeviceEntry]:
        for acct in self.accounts.values():
            for dev in acct.devices.values():
                if dev.token and hmac.compare_digest(dev.token, token):
                    if dev.invalidated or self.clock() > dev.token_expiry:
                        raise BadToken("session token expired or invalidated")
                    return acct, dev
        raise BadToken("unknown session token")

    # -- enrollment / sessions ------------------------------------------------

    def create_account(self, account_id: str, password: str,
                       recovery_secret: str) -> None:
        with self._lock:
            if account_id in self.accounts:
                raise DuplicateEnrollment(account_id)
            cred_salt = self.rng.randbytes(16)
            rec_salt = self.rng.randbytes(16)
            acct = AccountRecord(
                account_id=account_id,
                cred_salt=cred_salt,
                cred_hash=_scrypt(password, cred_salt),
                recovery_salt=rec_salt,
                recovery_hash=_scrypt(recovery_secret, rec_salt),
            )
            self.accounts[account_id] = acct
            self._journal("account", account_id=account_id,
                          cred_salt=cred_salt.hex(),
                          cred_hash=acct.cred_hash.hex(),
                          recovery_salt=rec_salt.hex(),
                          recovery_hash=acct.recovery_hash.hex())

    def register_device(self, account_id: str, password: str,
                        device_id: bytes, role: str, address: str = "") -> bytes:
        with self._lock:
            acct = self._account(account_id)
            if not hmac.compare_digest(acct.cred_hash,
                                       _scrypt(password, acct.cred_salt)):
                raise BadToken("bad account credentials")
            token = self.rng.randbytes(32)
            entry = DeviceEntry(device_id=device_id, role=role, address=address,
                                token=token,
                                token_expiry=self.clock() + TOKEN_LIFETIME)
            acct.devices[device_id] = entry
            self._journal("device", account_id=account_id,
                          device_id=device_id.hex(), role=role,
                          address=address, token=token.hex(),
                          token_expiry=entry.token_expiry)
            return token

    def invalidate_session(self, token: bytes, target_device_id: bytes) -> None:
        with self._lock:
            acct, _ = self._auth(token)
            target = acct.devices.get(target_device_id)
            if target is None:
                raise UnknownAccount("no such device on this account")
            target.invalidated = True
            target.token = b""
            self._journal("token_invalidate", account_id=acct.account_id,
                          device_id=target_device_id.hex())

    # -- vault -----------------------------------------------------------------

    def deposit_share(self, token: bytes, owner_role: str, value: int) -> None:
        """Store (or atomically overwrite, after a refresh) the recovery
        sub-share of the depositing device's key share."""
        with self._lock:
            acct, _ = self._auth(token)
            acct.vault[owner_role] = value
            self._journal("vault", account_id=acct.account_id,
                          role=owner_role, value=value)

    def deposit_catalog_key(self, token: bytes, wrapped: bytes) -> None:
        with self._lock:
            acct, _ = self._auth(token)
            acct.catalog_key_wrapped = wrapped
            self._journal("catalog_key", account_id=acct.account_id,
                          wrapped=wrapped.hex())

    # -- file store --------------------------------------------------------------

    def _blob_key(self, account_id: str, tag: bytes) -> str:
        return f"{account_id}-{tag.hex()}"

    def _sweep_trash(self, acct: AccountRecord) -> None:
        now = self.clock()
        for tag in [t for t, f in acct.files.items()
                    if f.deleted_at is not None
                    and now > f.deleted_at + TRASH_RETENTION]:
            acct.files.pop(tag)
            self.storage.delete(self._blob_key(acct.account_id, tag))
            self._journal("file_purge", account_id=acct.account_id,
                          tag=tag.hex())

    def file_put(self, token: bytes, record_bytes: bytes) -> None:
        record = FileRecord.decode(record_bytes)
        with self._lock:
            acct, _ = self._auth(token)
            self._sweep_trash(acct)
            existing = acct.files.get(record.tag)
            if existing is not None and record.tag != CATALOG_TAG:
                raise TagExists(record.tag.hex())
            acct.files[record.tag] = StoredFile(
                tag=record.tag, seed=record.seed, uploaded_at=self.clock(),
                size=len(record.body))
            self.storage.put(self._blob_key(acct.account_id, record.tag),
                             record.body)
            self._journal("file_put", account_id=acct.account_id,
                          tag=record.tag.hex(), seed=record.seed.hex(),
                          uploaded_at=acct.files[record.tag].uploaded_at,
                          size=len(record.body))

    def file_get(self, token: bytes, tag: bytes) -> bytes:
        with self._lock:
            acct, _ = self._auth(token)
            self._sweep_trash(acct)
            stored = acct.files.get(tag)
            if stored is None or stored.deleted_at is not None:
                raise UnknownTag(tag.hex())
            body = self.storage.get(self._blob_key(acct.account_id, tag))
            return FileRecord(tag=tag, seed=stored.seed, body=body).encode()

    def file_delete(self, token: bytes, tag: bytes) -> None:
        with self._lock:
            acct, _ = self._auth(token)
            stored = acct.files.get(tag)
            if stored is None or stored.deleted_at is not None:
                raise UnknownTag(tag.hex())
            stored.deleted_at = self.clock()
            self._journal("file_delete", account_id=acct.account_id,
                          tag=tag.hex(), deleted_at=stored.deleted_at)

    def file_undelete(self, token: bytes, tag: bytes) -> None:
        with self._lock:
            acct, _ = self._auth(token)
            self._sweep_trash(acct)
            stored = acct.files.get(tag)
            if stored is None or stored.deleted_at is None:
                raise UnknownTag(tag.hex())
            stored.deleted_at = None
            self._journal("file_undelete", account_id=acct.account_id,
                          tag=tag.hex())

    def list_tags(self, token: bytes) -> list[bytes]:
        with self._lock:
            acct, _ = self._auth(token)
            return [t for t, f in acct.files.items() if f.deleted_at is None]

    # -- recovery ------------------------------------------------------------------

    def recover_request(self, token: bytes, intent: str, which: str,
                        new_device_id: bytes, binding: bytes) -> str:
        """Start replacing the `which` device.  The surviving enrolled device
        authenticates the request; the old device gets pinged."""
        if intent not in ("migrate", "recover"):
            raise ValueError(f"bad intent {intent!r}")
        with self._lock:
            acct, requester = self._auth(token)
            # the device being replaced is whichever holds that role and is
            # not the incoming replacement (a device may replace itself:
            # that releases nothing it did not already deal out)
            old = next((d for d in acct.devices.values()
                        if d.role == which and not d.invalidated
                        and d.device_id != new_device_id), None)
            case = RecoveryCase(
                case_id=self.rng.randbytes(16).hex(),
                account_id=acct.account_id, intent=intent, which=which,
                new_device_id=new_device_id, binding=binding,
                state="pinging", created_at=self.clock(),
                old_device_id=old.device_id if old else b"")
            self.cases[case.case_id] = case
            if old is not None:
                self.pings.setdefault(old.device_id, []).append(case.case_id)
            self._journal_case(case)
            return case.case_id

    def poll_pings(self, token: bytes) -> list[dict]:
        """Old devices poll for pending replacement authorizations."""
        with self._lock:
            acct, dev = self._auth(token)
            out = []
            for case_id in self.pings.get(dev.device_id, []):
                case = self.cases[case_id]
                if case.state == "pinging":
                    out.append({"case_id": case.case_id, "which": case.which,
                                "intent": case.intent,
                                "new_device_id": case.new_device_id,
                                "binding": case.binding})
            return out

    def auth_respond(self, token: bytes, case_id: str, approved: bool,
                     binding: bytes = b"") -> None:
        """The old device answers a ping.  Any answer proves it is alive, so
        a recover-intent case flips to `responded` (use migration instead)."""
        with self._lock:
            acct, dev = self._auth(token)
            case = self._case(case_id)
            if case.old_device_id != dev.device_id:
                raise BadToken("only the pinged device may answer")
            if case.state != "pinging":
                raise AlreadyDecided(case.state)
            if case.intent == "recover":
                case.state = "responded"
            elif approved:
                case.state = "approved"
                if binding:
                    case.binding = binding
            else:
                case.state = "denied"
            pending = self.pings.get(dev.device_id, [])
            if case_id in pending:
                pending.remove(case_id)
            self._journal_case(case)

    def _case(self, case_id: str) -> RecoveryCase:
        try:
            return self.cases[case_id]
        except KeyError:
            raise UnknownAccount(f"no recovery case {case_id}") from None

    def case_state(self, case_id: str) -> str:
        with self._lock:
            case = self._case(case_id)
            if case.state == "pinging" and \
                    self.clock() > case.created_at + self.ping_timeout:
                # the old device never answered
                case.state = ("await-verification" if case.intent == "recover"
                              else "expired")
                self._journal_case(case)
            return case.state

    def case_info(self, case_id: str) -> dict:
        with self._lock:
            case = self._case(case_id)
            return {"case_id": case.case_id, "account_id": case.account_id,
                    "intent": case.intent, "which": case.which,
                    "new_device_id": case.new_device_id,
                    "state": self.case_state(case_id)}

    def verify_identity(self, account_id: str, proof: str, nonce: bytes,
                        case_id: Optional[str] = None,
                        binding: bytes = b"") -> bool:
        """Out-of-band identity verification stub: compares the supplied
        proof against the recovery secret registered at account creation.
        Single-use nonce envelope; throttled after repeated failures."""
        with self._lock:
            acct = self._account(account_id)
            now = self.clock()
            if now < acct.verify_locked_until:
                raise RecoveryLocked(
                    f"locked until {acct.verify_locked_until:.0f}")
            if nonce in acct.used_nonces:
                return False
            acct.used_nonces.add(nonce)
            ok = hmac.compare_digest(
                acct.recovery_hash, _scrypt(proof, acct.recovery_salt))
            if not ok:
                acct.verify_failures += 1
                if acct.verify_failures >= VERIFY_MAX_FAILURES:
                    acct.verify_locked_until = now + VERIFY_COOLDOWN
                    acct.verify_failures = 0
                self._journal("verify_state", account_id=account_id,
                              failures=acct.verify_failures,
                              locked_until=acct.verify_locked_until)
                return False
            acct.verify_failures = 0
            if case_id is not None:
                case = self._case(case_id)
                if case.state not in ("await-verification", "pinging"):
                    raise AlreadyDecided(case.state)
                case.state = "approved"
                if binding:
                    case.binding = binding
                self._journal_case(case)
            self._journal("verify_state", account_id=account_id,
                          failures=0, locked_until=0.0)
            return True

    def claim_release(self, account_id: str, case_id: str,
                      new_device_id: bytes, claim_secret: bytes,
                      address: str = "") -> dict:
        """Release the vault sub-share of the replaced device to the bound
        new device, register it, and invalidate the old device's session."""
        with self._lock:
            acct = self._account(account_id)
            case = self._case(case_id)
            state = self.case_state(case_id)
            if state == "denied":
                raise ApprovalDenied(case_id)
            if state == "responded":
                raise OldDeviceResponded(case_id)
            if state == "expired":
                raise OldDeviceUnreachable(case_id)
            if state != "approved":
                raise VerificationFailed(f"case is {state}, not approved")
            if case.binding != new_device_id + claim_secret:
                raise VerificationFailed("device binding mismatch")
            sub_share = acct.vault.get(case.which)
            if sub_share is None:
                raise UnknownAccount("vault is empty for this role")
            # retire the replaced device
            old = acct.devices.get(case.old_device_id)
            if old is not None:
                old.invalidated = True
                old.token = b""
                self._journal("token_invalidate", account_id=account_id,
                              device_id=old.device_id.hex())
            token = self.rng.randbytes(32)
            entry = DeviceEntry(device_id=new_device_id, role=case.which,
                                address=address, token=token,
                                token_expiry=self.clock() + TOKEN_LIFETIME)
            acct.devices[new_device_id] = entry
            self._journal("device", account_id=account_id,
                          device_id=new_device_id.hex(), role=case.which,
                          address=address, token=token.hex(),
                          token_expiry=entry.token_expiry)
            case.state = "released"
            self._journal_case(case)
            self.releases.append((case_id, case.which))
            self._journal("release", case_id=case_id, which=case.which)
            return {"which": case.which, "sub_share": sub_share,
                    "token": token,
                    "catalog_key_wrapped": acct.catalog_key_wrapped}

    # -- persistence -----------------------------------------------------------------

    def _journal(self, op: str, **payload) -> None:
        if self._journal_fh is None:
            return
        self._seq += 1
        rec = {"seq": self._seq, "op": op, **payload}
        self._journal_fh.write(json.dumps(rec, sort_keys=True) + "\n")
        self._journal_fh.flush()

    def _journal_case(self, case: RecoveryCase) -> None:
        self._journal("case", case_id=case.case_id,
                      account_id=case.account_id, intent=case.intent,
                      which=case.which,
                      new_device_id=case.new_device_id.hex(),
                      binding=case.binding.hex(), state=case.state,
                      created_at=case.created_at,
                      old_device_id=case.old_device_id.hex())

    def _apply(self, rec: dict) -> None:
        op = rec["op"]
        if op == "account":
            self.accounts[rec["account_id"]] = AccountRecord(
                account_id=rec["account_id"],
                cred_salt=bytes.fromhex(rec["cred_salt"]),
                cred_hash=bytes.fromhex(rec["cred_hash"]),
                recovery_salt=bytes.fromhex(rec["recovery_salt"]),
                recovery_hash=bytes.fromhex(rec["recovery_hash"]))
        elif op == "device":
            acct = self.accounts[rec["account_id"]]
            did = bytes.fromhex(rec["device_id"])
            acct.devices[did] = DeviceEntry(
                device_id=did, role=rec["role"], address=rec["address"],
                token=bytes.fromhex(rec["token"]),
                token_expiry=rec["token_expiry"])
        elif op == "vault":
            self.accounts[rec["account_id"]].vault[rec["role"]] = rec["value"]
        elif op == "catalog_key":
            self.accounts[rec["account_id"]].catalog_key_wrapped = \
                bytes.fromhex(rec["wrapped"])
        elif op == "file_put":
            acct = self.accounts[rec["account_id"]]
            tag = bytes.fromhex(rec["tag"])
            acct.files[tag] = StoredFile(
                tag=tag, seed=bytes.fromhex(rec["seed"]),
                uploaded_at=rec["uploaded_at"], size=rec["size"])
        elif op == "file_delete":
            acct = self.accounts[rec["account_id"]]
            acct.files[bytes.fromhex(rec["tag"])].deleted_at = rec["deleted_at"]
        elif op == "file_undelete":
            acct = self.accounts[rec["account_id"]]
            acct.files[bytes.fromhex(rec["tag"])].deleted_at = None
        elif op == "file_purge":
            self.accounts[rec["account_id"]].files.pop(
                bytes.fromhex(rec["tag"]), None)
        elif op == "token_invalidate":
            acct = self.accounts[rec["account_id"]]
            dev = acct.devices.get(bytes.fromhex(rec["device_id"]))
            if dev:
                dev.invalidated = True
                dev.token = b""
        elif op == "case":
            case = RecoveryCase(
                case_id=rec["case_id"], account_id=rec["account_id"],
                intent=rec["intent"], which=rec["which"],
                new_device_id=bytes.fromhex(rec["new_device_id"]),
                binding=bytes.fromhex(rec["binding"]), state=rec["state"],
                created_at=rec["created_at"],
                old_device_id=bytes.fromhex(rec["old_device_id"]))
            self.cases[case.case_id] = case
        elif op == "verify_state":
            acct = self.accounts[rec["account_id"]]
            acct.verify_failures = rec["failures"]
            acct.verify_locked_until = rec["locked_until"]
        elif op == "release":
            self.releases.append((rec["case_id"], rec["which"]))

    def _load(self) -> None:
        journal_path = os.path.join(self.persist_dir, "journal.jsonl")
        if not os.path.exists(journal_path):
            return
        with open(journal_path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                self._apply(rec)
                self._seq = max(self._seq, rec["seq"])

    def snapshot(self) -> None:
        """Compact the journal into a snapshot (journal is then truncated)."""
        if not self.persist_dir:
            return
        with self._lock:
            records = []
            for acct in self.accounts.values():
                records.append({"seq": 0, "op": "account",
                                "account_id": acct.account_id,
                                "cred_salt": acct.cred_salt.hex(),
                                "cred_hash": acct.cred_hash.hex(),
                                "recovery_salt": acct.recovery_salt.hex(),
                                "recovery_hash": acct.recovery_hash.hex()})
                for dev in acct.devices.values():
                    records.append({"seq": 0, "op": "device",
                                    "account_id": acct.account_id,
                                    "device_id": dev.device_id.hex(),
                                    "role": dev.role, "address": dev.address,
                                    "token": dev.token.hex(),
                                    "token_expiry": dev.token_expiry})
                    if dev.invalidated:
                        records.append({"seq": 0, "op": "token_invalidate",
                                        "account_id": acct.account_id,
                                        "device_id": dev.device_id.hex()})
                for role, value in acct.vault.items():
                    records.append({"seq": 0, "op": "vault",
                                    "account_id": acct.account_id,
                                    "role": role, "value": value})
                if acct.catalog_key_wrapped:
                    records.append({"seq": 0, "op": "catalog_key",
                                    "account_id": acct.account_id,
                                    "wrapped": acct.catalog_key_wrapped.hex()})
                for tag, f in acct.files.items():
                    records.append({"seq": 0, "op": "file_put",
                                    "account_id": acct.account_id,
                                    "tag": tag.hex(), "seed": f.seed.hex(),
                                    "uploaded_at": f.uploaded_at,
                                    "size": f.size})
                    if f.deleted_at is not None:
                        records.append({"seq": 0, "op": "file_delete",
                                        "account_id": acct.account_id,
                                        "tag": tag.hex(),
                                        "deleted_at": f.deleted_at})
            journal_path = os.path.join(self.persist_dir, "journal.jsonl")
            if self._journal_fh:
                self._journal_fh.close()
            with open(journal_path, "w") as fh:
                for rec in records:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
            self._journal_fh = open(journal_path, "a")

    def close(self) -> None:
        if self._journal_fh:
            self._journal_fh.close()
            self._journal_fh = None
