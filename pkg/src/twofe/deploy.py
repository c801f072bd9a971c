"""In-process deployments: one cloud, one primary, one secondary, wired over
synchronous links.  Deterministic when seeded (fixed clock, seeded rngs), so
scenario verdicts and engine tests replay bit-for-bit.
"""

from __future__ import annotations

import random
import time
from typing import Optional

from .agents import ApprovalPolicy, ApprovalQueue
from .cloud import CloudService
from .engine import CloudClient, EngineConfig, PrimaryDevice, SecondaryDevice
from .group import Group, Rng, production_group, seeded_rng
from .state import DeviceState
from .transport import SyncLink, WireLog


class FakeClock:
    def __init__(self, start: float = 1_700_000_000.0):
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, dt: float) -> None:
        self.now += dt


class Deployment:
    """A complete simulated system.  ``seed`` fixes every random choice and
    swaps in a fake clock; leave it None for wall-clock behaviour."""

    def __init__(self, seed: Optional[int] = None,
                 group: Optional[Group] = None,
                 policy: Optional[ApprovalPolicy] = None,
                 config: Optional[EngineConfig] = None,
                 account_id: str = "alice",
                 password: str = "correct horse",
                 recovery_secret: str = "passport-scan-042"):
        self.seed = seed
        self.group = group or production_group()
        self.config = config or EngineConfig(ping_timeout=5.0,
                                             case_poll_interval=0.0,
                                             case_wait_budget=10.0)
        self.account_id = account_id
        self.password = password
        self.recovery_secret = recovery_secret
        if seed is not None:
            self.clock: object = FakeClock()
            master = random.Random(seed)
            self._child = lambda: seeded_rng(master.getrandbits(64))
        else:
            self.clock = time.time
            self._child = lambda: Rng()

        self.cloud = CloudService(clock=self.clock, rng=self._child(),
                                  ping_timeout=self.config.ping_timeout)
        self.primary_log = WireLog()
        self.secondary_log = WireLog()
        self.secondary = self._make_secondary(policy)
        self.primary = self._make_primary()
        self.dead_devices: list = []

    # -- construction -----------------------------------------------------------

    def _make_secondary(self, policy: Optional[ApprovalPolicy],
                        log: Optional[WireLog] = None) -> SecondaryDevice:
        log = log or self.secondary_log
        rng = self._child()
        state = DeviceState(role="secondary", device_id=rng.randbytes(16),
                            account_id=self.account_id)
        approvals = ApprovalQueue(policy or ApprovalPolicy(),
                                  clock=self._now)
        return SecondaryDevice(self.group, state, CloudClient(self.cloud, log),
                               self.password, approvals=approvals, rng=rng,
                               config=self.config)

    def _make_primary(self, log: Optional[WireLog] = None,
                      secondary: Optional[SecondaryDevice] = None) -> PrimaryDevice:
        log = log or self.primary_log
        rng = self._child()
        state = DeviceState(role="primary", device_id=rng.randbytes(16),
                            account_id=self.account_id)
        secondary = secondary or self.secondary
        primary = PrimaryDevice(self.group, state,
                                CloudClient(self.cloud, log), self.password,
                                link=SyncLink(secondary.handle, log),
                                rng=rng, config=self.config)
        primary.approvals.clock = self._now
        primary.pump = self.pump
        return primary

    def _now(self) -> float:
        return self.clock() if callable(self.clock) else time.time()

    # -- lifecycle -----------------------------------------------------------------

    def enroll(self) -> None:
        self.primary.enroll(self.recovery_secret)

    def pump(self) -> None:
        """Advance the simulated world one tick: live devices answer pings,
        and (under the fake clock) time moves so silence can be noticed."""
        for dev in (self.primary, self.secondary):
            if dev not in self.dead_devices:
                try:
                    dev.poll_and_prompt()
                except Exception:
                    pass
        if isinstance(self.clock, FakeClock):
            self.clock.advance(1.0)

    def kill_device(self, device) -> None:
        self.dead_devices.append(device)

    # -- replacement helpers ---------------------------------------------------------

    def spawn_secondary(self, policy: Optional[ApprovalPolicy] = None
                        ) -> SecondaryDevice:
        """A fresh helper device, paired with the primary (the primary's
        link moves to it; the old helper stays reachable by the cloud)."""
        new_sec = self._make_secondary(policy, log=WireLog())
        self.primary.link = SyncLink(new_sec.handle, self.primary_log)
        self.primary.pair(flow="Migrate")
        return new_sec

    def replace_secondary(self, intent: str,
                          policy: Optional[ApprovalPolicy] = None,
                          recovery_secret: Optional[str] = None) -> SecondaryDevice:
        new_sec = self.spawn_secondary(policy)
        self.primary.replace_secondary(
            new_sec.state.device_id, new_sec.claim_recovered_share, intent,
            recovery_secret=recovery_secret)
        old = self.secondary
        old.state.wipe_shares()
        self.secondary = new_sec
        return new_sec

    def spawn_primary(self) -> PrimaryDevice:
        """A fresh primary, paired with the surviving helper; returns it
        un-enrolled (run adopt_primary_role on it)."""
        new_pri = self._make_primary(log=WireLog(), secondary=self.secondary)
        new_pri.state.catalog_key = b""
        new_pri.pair(flow="Migrate", expect_catalog_key=True)
        return new_pri

    def replace_primary(self, intent: str,
                        recovery_secret: Optional[str] = None) -> PrimaryDevice:
        new_pri = self.spawn_primary()
        new_pri.adopt_primary_role(intent, recovery_secret=recovery_secret)
        old = self.primary
        old.state.wipe_shares()
        self.primary = new_pri
        return new_pri

    # -- inspection ---------------------------------------------------------------

    def master_secret(self) -> int:
        """Test-only: reconstructs k_C + k_D to check invariants."""
        return self.group.scalar_add(self.primary.state.own_share,
                                     self.secondary.state.own_share)
