"""Non-interactive proof of discrete-log equality (Chaum-Pedersen made
non-interactive via Fiat-Shamir).

The helper device proves that the blinded element B it returns satisfies
log_A(B) = log_G(pk) without revealing its key share.  The challenge is the
full digest of the transcript (kappa bits); it enters scalar arithmetic
reduced mod p but is compared verbatim, so forging a proof for a false
statement requires a digest collision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .errors import EncodingError
from .group import Group, GroupElement, Rng


@dataclass(frozen=True)
class DleqProof:
    w: int    # challenge digest, < 2^kappa
    rho: int  # response scalar, < p

    def encode(self, group: Group) -> bytes:
        kappa_bytes = group.config.hash_bits // 8
        return group.scalar_encode(self.rho) + self.w.to_bytes(kappa_bytes, "big")

    @classmethod
    def decode(cls, group: Group, data: bytes) -> "DleqProof":
        kappa_bytes = group.config.hash_bits // 8
        n = group.config.scalar_bytes
        if len(data) != n + kappa_bytes:
            raise EncodingError("bad proof length")
        rho = group.scalar_decode(data[:n])
        w = int.from_bytes(data[n:], "big")
        return cls(w=w, rho=rho)


def _challenge(group: Group, g: GroupElement, p: GroupElement, a: GroupElement,
               b: GroupElement, tg: GroupElement, ta: GroupElement) -> int:
    parts = [g.encoding, p.encoding, a.encoding, b.encoding,
             tg.encoding, ta.encoding]
    return group.challenge_hash(parts)


def dleq_gen(group: Group, x: int, a: GroupElement, b: GroupElement,
             rng: Optional[Rng] = None, *,
             _nonce: Optional[int] = None,
             _challenge_fn: Optional[Callable[..., int]] = None) -> DleqProof:
    """Prove log_a(b) = log_G(x*G) with witness x (requires b = x*a).

    The nonce is fresh per call.  ``_nonce`` and ``_challenge_fn`` exist only
    so tests can replay the worked toy example; production callers leave
    them unset.
    """
    t = group.scalar_random(rng) if _nonce is None else _nonce % group.config.order
    tg = group.base_mult(t)
    ta = group.scalar_mult(t, a)
    xg = group.base_mult(x)
    chal = _challenge_fn or _challenge
    w = chal(group, group.generator, xg, a, b, tg, ta)
    rho = group.scalar_add(t, group.scalar_mul(w % group.config.order, x))
    return DleqProof(w=w, rho=rho)


def dleq_ver(group: Group, a: GroupElement, b: GroupElement, proof: DleqProof,
             p: GroupElement, *,
             _challenge_fn: Optional[Callable[..., int]] = None) -> bool:
    """Check a proof against public key p = x*G.  Returns False on any
    mismatch; malformed encodings raise EncodingError before this point."""
    w_scalar = proof.w % group.config.order
    tg = group.element_sub(group.base_mult(proof.rho),
                           group.scalar_mult(w_scalar, p))
    ta = group.element_sub(group.scalar_mult(proof.rho, a),
                           group.scalar_mult(w_scalar, b))
    chal = _challenge_fn or _challenge
    return chal(group, group.generator, p, a, b, tg, ta) == proof.w
