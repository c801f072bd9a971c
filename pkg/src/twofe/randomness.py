"""Two-party commit-reveal coin toss.

Both devices end up with the same uniform seed, and neither can steer it:
the initiator commits to its half before seeing the responder's, and the
responder only answers after the commitment has arrived.  The initiator can
still abort after learning the result (inherent two-party unfairness); an
abort never emits a seed.
"""

from __future__ import annotations

from typing import Optional

from .errors import EncodingError, ProtocolOrderError, SrAbort
from .group import Group, Rng

INIT = "Init"
COMMITTED = "Committed"
REVEALED = "Revealed"
DONE = "Done"
ABORTED = "Aborted"

ROLE_INITIATOR = "initiator"
ROLE_RESPONDER = "responder"


def sr_finalize(s0: bytes, s1: bytes) -> bytes:
    """The joint seed is the bitwise XOR of the two halves."""
    if len(s0) != len(s1):
        raise EncodingError("seed halves differ in length")
    return bytes(a ^ b for a, b in zip(s0, s1))


class SeedSession:
    """Single-writer state machine for one coin toss.

    The initiating (primary) side calls commit / on_share / reveal; the
    responding side calls on_commit / respond / on_reveal.  State only moves
    forward; out-of-order calls raise ProtocolOrderError.
    """

    def __init__(self, group: Group, role: str, seed_len: Optional[int] = None,
                 rng: Optional[Rng] = None):
        if role not in (ROLE_INITIATOR, ROLE_RESPONDER):
            raise ValueError(f"bad role {role!r}")
        self.group = group
        self.role = role
        self.seed_len = seed_len if seed_len is not None else group.seed_bytes
        if self.seed_len > group.seed_bytes:
            raise EncodingError("logical seed longer than commitment preimage")
        self.rng = rng or Rng()
        self.state = INIT
        self.s0: Optional[bytes] = None
        self.s0_padded: Optional[bytes] = None
        self.s1: Optional[bytes] = None
        self.commitment: Optional[bytes] = None
        self.seed: Optional[bytes] = None

    def _require(self, role: str, state: str) -> None:
        if self.role != role:
            raise ProtocolOrderError(f"{self.role} cannot perform {role} step")
        if self.state != state:
            raise ProtocolOrderError(
                f"expected state {state}, session is {self.state}")

    # -- initiator ----------------------------------------------------------

    def commit(self) -> bytes:
        self._require(ROLE_INITIATOR, INIT)
        # The committed preimage is always a full lambda bits.  The coin is
        # high-entropy in production, so no extra randomness is needed; when
        # a test profile uses a shorter logical seed, the remaining bytes are
        # random padding so the commitment still hides the coin.
        self.s0_padded = self.rng.randbytes(self.group.seed_bytes)
        self.s0 = self.s0_padded[:self.seed_len]
        self.commitment = self.group.commit(self.s0_padded)
        self.state = COMMITTED
        return self.commitment

    def on_share(self, s1: bytes) -> None:
        self._require(ROLE_INITIATOR, COMMITTED)
        if len(s1) != self.seed_len:
            self.abort()
            raise EncodingError("responder share has wrong length")
        self.s1 = s1
        self.state = REVEALED

    def reveal(self) -> bytes:
        """Returns the full committed preimage; the logical coin is its
        first seed_len bytes."""
        self._require(ROLE_INITIATOR, REVEALED)
        self.seed = sr_finalize(self.s0, self.s1)
        self.state = DONE
        return self.s0_padded

    # -- responder ----------------------------------------------------------

    def on_commit(self, commitment: bytes) -> None:
        self._require(ROLE_RESPONDER, INIT)
        self.commitment = commitment
        self.state = COMMITTED

    def respond(self) -> bytes:
        # s1 is drawn only after the commitment is stored, so it cannot
        # depend on s0 in any way the initiator could exploit.
        self._require(ROLE_RESPONDER, COMMITTED)
        self.s1 = self.rng.randbytes(self.seed_len)
        self.state = REVEALED
        return self.s1

    def on_reveal(self, s0_padded: bytes) -> bytes:
        self._require(ROLE_RESPONDER, REVEALED)
        if len(s0_padded) != self.group.seed_bytes or not \
                self.group.commit_verify(self.commitment, s0_padded):
            self.abort()
            raise SrAbort("reveal does not match commitment")
        self.s0_padded = s0_padded
        self.s0 = s0_padded[:self.seed_len]
        self.seed = sr_finalize(self.s0, self.s1)
        self.state = DONE
        return self.seed

    # -- both ----------------------------------------------------------------

    def abort(self) -> None:
        if self.state not in (DONE, ABORTED):
            self.state = ABORTED
        self.seed = None
        self.s0 = None
        self.s0_padded = None

    def output(self) -> bytes:
        if self.state != DONE or self.seed is None:
            raise SrAbort("no seed: session not Done")
        return self.seed
