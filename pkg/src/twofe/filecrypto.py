"""Authenticated file encryption under derived keys, file tags, and the
encrypted filename->tag catalog.

Every file key comes out of one threshold-PRF run and is used exactly once,
so chunk nonces can be a plain counter: they never repeat across files
because the keys differ, and never within a file because the counter does.
The file tag and the chunk geometry are bound as associated data; the
catalog key is long-lived and therefore gets a random nonce per write.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .errors import AuthFailure, CatalogError, EncodingError, NameNotFound
from .group import Rng

TAG_LEN = 16
SEED_LEN = 32
CHUNK_SIZE = 1 << 20
RECORD_VERSION = 1

# The catalog lives in the cloud under this reserved tag (upsert allowed).
CATALOG_TAG = b"\xff" * TAG_LEN

_FILE_AD = b"2FE-FILE"
_CATALOG_AD = b"2FE-CATALOG"


def generate_tag(rng: Optional[Rng] = None) -> bytes:
    """16 uniform bytes identifying a ciphertext; reveals nothing about it."""
    rng = rng or Rng()
    while True:
        t = rng.randbytes(TAG_LEN)
        if t != CATALOG_TAG:
            return t


def _chunk_nonce(index: int) -> bytes:
    return index.to_bytes(12, "big")


def _chunk_ad(tag: bytes, index: int, count: int) -> bytes:
    return _FILE_AD + tag + index.to_bytes(4, "big") + count.to_bytes(4, "big")


def encrypt_file(key: bytes, plaintext: bytes, tag: bytes) -> bytes:
    """AEAD-encrypt into the chunked ciphertext body (no record header)."""
    if len(key) != 32:
        raise EncodingError("file keys are 32 bytes")
    if len(tag) != TAG_LEN:
        raise EncodingError("file tags are 16 bytes")
    aead = ChaCha20Poly1305(key)
    count = max(1, (len(plaintext) + CHUNK_SIZE - 1) // CHUNK_SIZE)
    out = [count.to_bytes(4, "big")]
    for i in range(count):
        chunk = plaintext[i * CHUNK_SIZE:(i + 1) * CHUNK_SIZE]
        ct = aead.encrypt(_chunk_nonce(i), chunk, _chunk_ad(tag, i, count))
        out.append(len(ct).to_bytes(4, "big"))
        out.append(ct)
    return b"".join(out)


def decrypt_file(key: bytes, body: bytes, tag: bytes) -> bytes:
    """Inverse of encrypt_file; raises AuthFailure on wrong key, wrong tag,
    or any tampering (including truncation or chunk reorder)."""
    if len(key) != 32:
        raise EncodingError("file keys are 32 bytes")
    aead = ChaCha20Poly1305(key)
    try:
        count = int.from_bytes(body[:4], "big")
        pos = 4
        chunks = []
        for i in range(count):
            clen = int.from_bytes(body[pos:pos + 4], "big")
            pos += 4
            ct = body[pos:pos + clen]
            if len(ct) != clen:
                raise AuthFailure("ciphertext truncated")
            pos += clen
            chunks.append(aead.decrypt(_chunk_nonce(i), ct,
                                       _chunk_ad(tag, i, count)))
        if pos != len(body):
            raise AuthFailure("trailing bytes after last chunk")
    except InvalidTag:
        raise AuthFailure("authentication failed") from None
    except (IndexError, ValueError):
        raise AuthFailure("malformed ciphertext body") from None
    return b"".join(chunks)


@dataclass
class FileRecord:
    """What the cloud stores per file: ciphertext body, tag, seed."""

    tag: bytes
    seed: bytes
    body: bytes

    def encode(self) -> bytes:
        return (RECORD_VERSION.to_bytes(1, "big") + self.tag + self.seed
                + self.body)

    @classmethod
    def decode(cls, data: bytes) -> "FileRecord":
        if len(data) < 1 + TAG_LEN + SEED_LEN + 4:
            raise EncodingError("file record too short")
        if data[0] != RECORD_VERSION:
            raise EncodingError(f"unknown file record version {data[0]}")
        tag = data[1:1 + TAG_LEN]
        seed = data[1 + TAG_LEN:1 + TAG_LEN + SEED_LEN]
        return cls(tag=tag, seed=seed, body=data[1 + TAG_LEN + SEED_LEN:])


class Catalog:
    """filename -> tag mapping, stored in the cloud encrypted under a static
    catalog key so plaintext names never leave the devices."""

    def __init__(self, entries: Optional[dict[str, bytes]] = None):
        self.entries: dict[str, bytes] = dict(entries or {})

    def put(self, name: str, tag: bytes) -> None:
        self.entries[name] = tag

    def resolve(self, name: str) -> bytes:
        try:
            return self.entries[name]
        except KeyError:
            raise NameNotFound(f"no catalog entry for {name!r}") from None

    def name_for(self, tag: bytes) -> Optional[str]:
        for name, t in self.entries.items():
            if t == tag:
                return name
        return None

    def serialize(self) -> bytes:
        out = [len(self.entries).to_bytes(4, "big")]
        for name, tag in sorted(self.entries.items()):
            nb = name.encode("utf-8")
            out.append(len(nb).to_bytes(2, "big"))
            out.append(nb)
            out.append(tag)
        return b"".join(out)

    @classmethod
    def deserialize(cls, data: bytes) -> "Catalog":
        try:
            count = int.from_bytes(data[:4], "big")
            pos = 4
            entries = {}
            for _ in range(count):
                nlen = int.from_bytes(data[pos:pos + 2], "big")
                pos += 2
                name = data[pos:pos + nlen].decode("utf-8")
                pos += nlen
                entries[name] = data[pos:pos + TAG_LEN]
                pos += TAG_LEN
            if pos != len(data):
                raise ValueError
        except (ValueError, UnicodeDecodeError):
            raise CatalogError("malformed catalog plaintext") from None
        return cls(entries)

    def encrypt(self, catalog_key: bytes, rng: Optional[Rng] = None) -> bytes:
        rng = rng or Rng()
        nonce = rng.randbytes(12)
        aead = ChaCha20Poly1305(catalog_key)
        return nonce + aead.encrypt(nonce, self.serialize(), _CATALOG_AD)

    @classmethod
    def decrypt(cls, catalog_key: bytes, blob: bytes) -> "Catalog":
        if len(blob) < 12 + 16:
            raise CatalogError("catalog blob too short")
        aead = ChaCha20Poly1305(catalog_key)
        try:
            data = aead.decrypt(blob[:12], blob[12:], _CATALOG_AD)
        except InvalidTag:
            raise CatalogError("catalog failed to decrypt") from None
        return cls.deserialize(data)


def new_catalog_key(rng: Optional[Rng] = None) -> bytes:
    return (rng or Rng()).randbytes(32)
