"""2-out-of-2 additive secret sharing over Z_p, the three-way share layout
each device keeps after enrollment, and proactive refresh by adding a
sharing of zero."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .group import Group, GroupElement, Rng

ROLE_PRIMARY = "primary"
ROLE_SECONDARY = "secondary"


def share(group: Group, v: int, rng: Optional[Rng] = None) -> tuple[int, int]:
    """Split v into (v0, v1) with v0 uniform and v0 + v1 = v (mod p)."""
    v0 = group.scalar_random(rng)
    return v0, group.scalar_sub(v, v0)


def reconstruct(group: Group, v0: int, v1: int) -> int:
    return group.scalar_add(v0, v1)


def refresh_pair(group: Group, own: int, rng: Optional[Rng] = None) -> tuple[int, int]:
    """Refresh by a sharing of zero: pick random z, return
    (own + z, -z); the peer adds the second value to its share and the sum
    is unchanged.  Only the primary initiates refresh."""
    z = group.scalar_random(rng)
    return group.scalar_add(own, z), group.scalar_neg(z)


def split_own_share(group: Group, own: int, rng: Optional[Rng] = None) -> tuple[int, int]:
    """Sub-share a device's key share for recovery: (for the peer, for the
    cloud), summing back to the share itself."""
    sub_peer = group.scalar_random(rng)
    return sub_peer, group.scalar_sub(own, sub_peer)


@dataclass
class ShareSet:
    """A device's key share plus the sub-shares it dealt out.

    Invariant: sub_share_peer + sub_share_cloud = own_share (mod p).
    """

    role: str
    own_share: int
    sub_share_peer: int
    sub_share_cloud: int

    @classmethod
    def deal(cls, group: Group, role: str, own: Optional[int] = None,
             rng: Optional[Rng] = None) -> "ShareSet":
        if own is None:
            own = group.scalar_random(rng)
        sub_peer, sub_cloud = split_own_share(group, own, rng)
        return cls(role=role, own_share=own,
                   sub_share_peer=sub_peer, sub_share_cloud=sub_cloud)

    def check(self, group: Group) -> bool:
        return group.scalar_add(self.sub_share_peer, self.sub_share_cloud) \
            == self.own_share


@dataclass
class MasterKeyView:
    """What the primary may know about the helper's share: only pk = k_D * G.
    The master secret k_C + k_D exists nowhere explicitly."""

    pk: GroupElement
