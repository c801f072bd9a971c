"""Prime-order group abstraction shared by every protocol in the package.

Two profiles exist:

* ``production_group()`` - ristretto255, a prime-order group of ~2^252
  elements with canonical 32-byte encodings and a vetted hash-to-group map.
* ``toy_group()`` - the additive group Z_101 with generator 1, so that
  scalar·G = scalar mod 101.  Hand-checkable; used by oracle tests only.

Scalars are plain Python ints in [0, p-1].  Group elements are opaque
``GroupElement`` handles; all arithmetic goes through the ``Group`` object.

Every hash invocation is domain separated by an ASCII tag:

* ``2FE-H1``      hash-to-group
* ``2FE-NIZK``    proof challenges
* ``2FE-COMMIT``  commitments
* ``2FE-KDF``     key derivation
"""

from __future__ import annotations

import hashlib
import hmac
import secrets
from dataclasses import dataclass
from typing import Optional

from . import _ristretto
from .errors import EncodingError

TAG_H1 = b"2FE-H1"
TAG_NIZK = b"2FE-NIZK"
TAG_COMMIT = b"2FE-COMMIT"
TAG_KDF = b"2FE-KDF"


def frame(domain: bytes, parts: list[bytes]) -> bytes:
    """Unambiguous framing: tagged, length-prefixed concatenation."""
    out = [len(domain).to_bytes(1, "big"), domain, len(parts).to_bytes(4, "big")]
    for p in parts:
        out.append(len(p).to_bytes(4, "big"))
        out.append(p)
    return b"".join(out)


class GroupElement:
    """Opaque element of the group; compared and hashed by canonical encoding."""

    __slots__ = ("raw", "encoding")

    def __init__(self, raw, encoding: bytes):
        self.raw = raw
        self.encoding = encoding

    def __eq__(self, other) -> bool:
        return isinstance(other, GroupElement) and self.encoding == other.encoding

    def __hash__(self) -> int:
        return hash(self.encoding)

    def __repr__(self) -> str:
        return f"GroupElement({self.encoding.hex()})"


class Rng:
    """Randomness source; the default draws from the OS CSPRNG.

    Scenario and benchmark runs substitute a ``seeded_rng`` so whole
    deployments replay deterministically.
    """

    def randbytes(self, n: int) -> bytes:
        return secrets.token_bytes(n)

    def randbelow(self, n: int) -> int:
        return secrets.randbelow(n)


class SeededRng(Rng):
    def __init__(self, seed: int):
        import random

        self._r = random.Random(seed)

    def randbytes(self, n: int) -> bytes:
        return self._r.randbytes(n)

    def randbelow(self, n: int) -> int:
        return self._r.randrange(n)


def seeded_rng(seed: int) -> Rng:
    return SeededRng(seed)


@dataclass(frozen=True)
class GroupConfig:
    group_id: str
    order: int          # prime p; scalars live in [0, p-1]
    scalar_bytes: int   # fixed-length big-endian scalar encoding
    element_bytes: int
    seed_bits: int      # lambda: seeds and derived keys
    hash_bits: int      # kappa: commitment / challenge hash output


class Group:
    """Interface shared by the production and toy profiles.

    Subclasses supply element arithmetic and hash-to-group; scalar
    arithmetic, framing hashes, and commitments live here.
    """

    config: GroupConfig
    generator: GroupElement
    identity: GroupElement

    # -- scalar field ------------------------------------------------------

    def scalar_random(self, rng: Optional[Rng] = None) -> int:
        return (rng or _DEFAULT_RNG).randbelow(self.config.order)

    def scalar_add(self, a: int, b: int) -> int:
        return (a + b) % self.config.order

    def scalar_sub(self, a: int, b: int) -> int:
        return (a - b) % self.config.order

    def scalar_mul(self, a: int, b: int) -> int:
        return (a * b) % self.config.order

    def scalar_neg(self, a: int) -> int:
        return (-a) % self.config.order

    def scalar_encode(self, a: int) -> bytes:
        if not 0 <= a < self.config.order:
            raise EncodingError("scalar out of range")
        return a.to_bytes(self.config.scalar_bytes, "big")

    def scalar_decode(self, data: bytes) -> int:
        if len(data) != self.config.scalar_bytes:
            raise EncodingError("bad scalar length")
        v = int.from_bytes(data, "big")
        if v >= self.config.order:
            raise EncodingError("scalar not canonical")
        return v

    # -- element arithmetic (profile-specific) -----------------------------

    def element_add(self, a: GroupElement, b: GroupElement) -> GroupElement:
        raise NotImplementedError

    def element_sub(self, a: GroupElement, b: GroupElement) -> GroupElement:
        raise NotImplementedError

    def scalar_mult(self, k: int, p: GroupElement) -> GroupElement:
        raise NotImplementedError

    def base_mult(self, k: int) -> GroupElement:
        raise NotImplementedError

    def element_decode(self, data: bytes) -> GroupElement:
        raise NotImplementedError

    def hash_to_group(self, data: bytes) -> GroupElement:
        raise NotImplementedError

    # -- domain-separated hashes -------------------------------------------

    def hash_to_scalar(self, domain: bytes, parts: list[bytes]) -> int:
        digest = hashlib.sha512(frame(domain, parts)).digest()
        return int.from_bytes(digest, "big") % self.config.order

    def challenge_hash(self, parts: list[bytes]) -> int:
        """Proof challenge: the full kappa-bit digest, compared verbatim.

        The challenge is reduced mod p only when it enters scalar
        arithmetic; verification compares the digest itself, so the
        cheating bound is 1/2^kappa independent of the group size.
        """
        return int.from_bytes(
            hashlib.sha256(frame(TAG_NIZK, parts)).digest(), "big"
        )

    def kdf(self, x: bytes, point: GroupElement) -> bytes:
        return hashlib.sha256(frame(TAG_KDF, [x, point.encoding])).digest()

    # -- commitments ---------------------------------------------------------

    @property
    def seed_bytes(self) -> int:
        return self.config.seed_bits // 8

    def commit(self, preimage: bytes) -> bytes:
        if len(preimage) != self.seed_bytes:
            raise EncodingError(
                f"commitment preimage must be {self.seed_bytes} bytes"
            )
        return hashlib.sha256(frame(TAG_COMMIT, [preimage])).digest()

    def commit_verify(self, commitment: bytes, preimage: bytes) -> bool:
        try:
            expected = self.commit(preimage)
        except EncodingError:
            return False
        return hmac.compare_digest(expected, commitment)


class Ristretto255Group(Group):
    """Production profile: ristretto255 with RFC 9496 encodings."""

    def __init__(self):
        self.config = GroupConfig(
            group_id="ristretto255",
            order=_ristretto.ORDER,
            scalar_bytes=32,
            element_bytes=32,
            seed_bits=256,
            hash_bits=256,
        )
        self.identity = GroupElement(
            _ristretto.IDENTITY, _ristretto.encode(_ristretto.IDENTITY)
        )
        self.generator = self._wrap(_ristretto.BASEPOINT)
        self._base_table = _ristretto.BasePointTable(_ristretto.BASEPOINT)

    def _wrap(self, raw) -> GroupElement:
        return GroupElement(raw, _ristretto.encode(raw))

    def element_add(self, a, b):
        return self._wrap(_ristretto.pt_add(a.raw, b.raw))

    def element_sub(self, a, b):
        return self._wrap(_ristretto.pt_add(a.raw, _ristretto.pt_neg(b.raw)))

    def scalar_mult(self, k, p):
        return self._wrap(_ristretto.pt_mul(k % self.config.order, p.raw))

    def base_mult(self, k):
        return self._wrap(self._base_table.mul(k % self.config.order))

    def element_decode(self, data):
        try:
            raw = _ristretto.decode(data)
        except ValueError as exc:
            raise EncodingError(str(exc)) from None
        return GroupElement(raw, bytes(data))

    def hash_to_group(self, data: bytes) -> GroupElement:
        if not data:
            raise EncodingError("hash_to_group input must be non-empty")
        counter = 0
        while True:
            uniform = hashlib.sha512(
                frame(TAG_H1, [self.config.group_id.encode(), data])
                + counter.to_bytes(1, "big")
            ).digest()
            raw = _ristretto.from_uniform_bytes(uniform)
            el = self._wrap(raw)
            if el != self.identity:  # astronomically unlikely to loop
                return el
            counter += 1


class ToyGroup(Group):
    """Additive group Z_101 with G = 1; scalar·G = scalar mod 101.

    Hashes keep the production framing: hash-to-group is the constant stub
    x -> 13 so worked examples stay hand-checkable, while challenges remain
    real digests so misbehaviour detection works at full strength.
    """

    def __init__(self, order: int = 101, seed_bits: int = 256):
        self.config = GroupConfig(
            group_id=f"toy-z{order}",
            order=order,
            scalar_bytes=(order.bit_length() + 7) // 8,
            element_bytes=(order.bit_length() + 7) // 8,
            seed_bits=seed_bits,
            hash_bits=256,
        )
        self.identity = self._wrap(0)
        self.generator = self._wrap(1)

    def _wrap(self, v: int) -> GroupElement:
        v %= self.config.order
        return GroupElement(v, v.to_bytes(self.config.element_bytes, "big"))

    def element_add(self, a, b):
        return self._wrap(a.raw + b.raw)

    def element_sub(self, a, b):
        return self._wrap(a.raw - b.raw)

    def scalar_mult(self, k, p):
        return self._wrap(k * p.raw)

    def base_mult(self, k):
        return self._wrap(k)

    def element_decode(self, data):
        if len(data) != self.config.element_bytes:
            raise EncodingError("bad element length")
        v = int.from_bytes(data, "big")
        if v >= self.config.order:
            raise EncodingError("element not canonical")
        return self._wrap(v)

    def hash_to_group(self, data: bytes) -> GroupElement:
        if not data:
            raise EncodingError("hash_to_group input must be non-empty")
        return self._wrap(13)


_production: Optional[Ristretto255Group] = None
_DEFAULT_RNG = Rng()


def production_group() -> Ristretto255Group:
    """Shared production profile (the base-point table makes this stateful-ish
    but immutable, so one instance serves the whole process)."""
    global _production
    if _production is None:
        _production = Ristretto255Group()
    return _production


def toy_group(seed_bits: int = 256) -> ToyGroup:
    return ToyGroup(seed_bits=seed_bits)
