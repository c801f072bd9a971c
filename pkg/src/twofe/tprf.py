"""Two-party threshold PRF: k = H(x, (k_C + k_D) * H'(x)).

The helper (secondary) blinds H'(x) with its share and proves it used the
key behind the enrolled pk; the primary verifies, adds its own share's
contribution, and hashes.  A wrong helper share is detected before any key
material is produced, so a misbehaving helper only ever learns an
accept/reject bit.
"""

from __future__ import annotations

from typing import Optional

from .dleq import DleqProof, dleq_gen, dleq_ver
from .errors import BadProofError
from .group import Group, GroupElement, Rng

INPUT_TAG = b"2FE-KDF-INPUT"


def prf_input(tag: bytes, seed: bytes) -> bytes:
    """Canonical PRF input for one file: both devices must compute this
    identically from (tag, seed) or verification fails."""
    return (INPUT_TAG
            + len(tag).to_bytes(4, "big") + tag
            + len(seed).to_bytes(4, "big") + seed)


def tprf_respond(group: Group, x: bytes, k_d: int,
                 rng: Optional[Rng] = None) -> tuple[GroupElement, DleqProof]:
    """Helper side: B = k_D * H'(x) plus a proof that the same k_D underlies
    the enrolled public key."""
    a = group.hash_to_group(x)
    b = group.scalar_mult(k_d, a)
    proof = dleq_gen(group, k_d, a, b, rng)
    return b, proof


def tprf_finish(group: Group, x: bytes, k_c: int, pk: GroupElement,
                b: GroupElement, proof: DleqProof) -> bytes:
    """Primary side: verify the helper's answer against pk, then derive
    k = H(x, B + k_C * H'(x)).  Raises BadProofError without deriving
    anything when verification fails."""
    a = group.hash_to_group(x)
    if not dleq_ver(group, a, b, proof, pk):
        raise BadProofError(
            "helper response failed verification; its key share does not "
            "match the enrolled public key (re-run enrollment sync if a "
            "refresh is in flight)")
    point = group.element_add(b, group.scalar_mult(k_c, a))
    return group.kdf(x, point)


def tprf_oracle(group: Group, x: bytes, master: int) -> bytes:
    """Direct single-party evaluation H(x, master * H'(x)).

    Test oracle only: reconstructing the master secret defeats the whole
    point outside equivalence checks.
    """
    a = group.hash_to_group(x)
    return group.kdf(x, group.scalar_mult(master, a))
