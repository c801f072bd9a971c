"""Scripted adversary scenarios: one per compromise case (stolen, temporary
access, malware, on either device), four recovery-attack cases, the cloud
adversary, and the forgotten-password case.

Each scenario runs against a fresh seeded deployment, captures exactly what
its adversary tier can see, and checks two families of assertions:

* confidentiality: the captured scalars never combine to the master secret
  (checked by exhaustive subset sums over the capture), and gated paths
  stay shut;
* availability: files uploaded before the compromise decrypt after the
  prescribed recovery.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .agents import ApprovalPolicy
from .deploy import Deployment
from .errors import (
    ApprovalDenied,
    BadProofError,
    BadToken,
    PolicyDenied,
    RecoveryLocked,
    VerificationFailed,
)
from .transport import SyncLink


@dataclass
class Assertion:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class Verdict:
    scenario: str
    assertions: list[Assertion]

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "passed": self.passed,
                "assertions": [{"name": a.name, "passed": a.passed,
                                "detail": a.detail}
                               for a in self.assertions]}


@dataclass
class Scenario:
    name: str
    compromise: Optional[str]    # e.g. "stolen:secondary"
    description: str
    run: Callable[[Deployment, list[Assertion]], None]


def capture_device(device) -> dict[str, int]:
    """What a thief reads off a device's disk: every scalar in the state
    file (the stolen-device adversary tier)."""
    st = device.state
    return {"own_share": st.own_share, "sub_share_peer": st.sub_share_peer,
            "sub_share_cloud": st.sub_share_cloud,
            "held_for_peer": st.held_for_peer}


def subset_sums_miss(group, scalars: list[int], target: int) -> bool:
    """True when no subset of the captured scalars sums to the target."""
    p = group.config.order
    sums = {0}
    for s in scalars:
        sums |= {(x + s) % p for x in sums}
    return target not in (sums - {0})


def _check(assertions: list[Assertion], name: str, cond: bool,
           detail: str = "") -> None:
    assertions.append(Assertion(name=name, passed=bool(cond), detail=detail))


def _expect(assertions, name, exc_types, fn) -> None:
    try:
        fn()
    except exc_types as exc:
        _check(assertions, name, True, f"raised {type(exc).__name__}")
    except Exception as exc:  # wrong failure is a failure
        _check(assertions, name, False, f"unexpected {type(exc).__name__}: {exc}")
    else:
        _check(assertions, name, False, "no error raised")


# ---------------------------------------------------------------------------
# compromise scenarios


def stolen_secondary(dep: Deployment, out: list[Assertion]) -> None:
    dep.enroll()
    dep.primary.encrypt_flow(b"pre-theft file", "doc.txt")
    master = dep.master_secret()
    loot = capture_device(dep.secondary)
    stolen_token = dep.secondary.state.session_token

    _check(out, "capture-misses-master",
           subset_sums_miss(dep.group, list(loot.values()), master))
    _expect(out, "thief-fails-identity-verification",
            (VerificationFailed, RecoveryLocked),
            lambda: _drain_verify(dep, "not the real secret"))
    dep.kill_device(dep.secondary)
    dep.cloud.accounts[dep.account_id].verify_locked_until = 0.0
    dep.replace_secondary("recover", recovery_secret=dep.recovery_secret)
    _check(out, "recovery-restores-decryption",
           dep.primary.decrypt_flow(name="doc.txt") == b"pre-theft file")
    _expect(out, "stolen-session-is-dead", BadToken,
            lambda: dep.cloud.list_tags(stolen_token))
    _check(out, "stale-share-misses-refreshed-master",
           (loot["own_share"] + dep.primary.state.own_share)
           % dep.group.config.order != dep.master_secret()
           or loot["own_share"] == dep.secondary.state.own_share)


def _drain_verify(dep: Deployment, wrong_secret: str) -> None:
    for i in range(3):
        ok = dep.cloud.verify_identity(dep.account_id, wrong_secret,
                                       b"adv%d" % i)
        if ok:
            return  # would be a catastrophic failure; caught by _expect
    raise VerificationFailed("all attempts rejected")


def temporary_secondary(dep: Deployment, out: list[Assertion]) -> None:
    dep.enroll()
    dep.primary.encrypt_flow(b"calm before", "a.txt")
    master = dep.master_secret()
    # live API access, no state exfiltration: the helper simply has no
    # entry point that starts an encryption or decryption
    _check(out, "helper-cannot-initiate-flows",
           not any(hasattr(dep.secondary, m)
                   for m in ("encrypt_flow", "decrypt_flow")))
    # what it can do is answer protocol messages; responses are blinded
    from twofe.tprf import prf_input, tprf_respond

    x = prf_input(b"\x01" * 16, b"\x02" * 32)
    blinded, _proof = tprf_respond(dep.group, x, dep.secondary.state.own_share,
                                   dep.secondary.rng)
    _check(out, "responses-are-group-elements-not-shares",
           len(blinded.encoding) == 32)
    _check(out, "files-stay-available",
           dep.primary.decrypt_flow(name="a.txt") == b"calm before")
    _check(out, "master-intact", dep.master_secret() == master)


def malware_secondary(dep: Deployment, out: list[Assertion]) -> None:
    dep.enroll()
    dep.primary.encrypt_flow(b"pre-infection", "keep.txt")
    files_before = len(dep.cloud.accounts[dep.account_id].files)
    # malware swaps in a false key share (pk stays as enrolled)
    honest = dep.secondary.state.own_share
    dep.secondary.state.own_share = (honest + 12345) % dep.group.config.order
    _expect(out, "wrong-share-detected", BadProofError,
            lambda: dep.primary.encrypt_flow(b"poison", "new.txt"))
    _check(out, "nothing-uploaded-on-detection",
           len(dep.cloud.accounts[dep.account_id].files) == files_before)
    _expect(out, "decryption-also-detects", BadProofError,
            lambda: dep.primary.decrypt_flow(name="keep.txt"))
    # user notices, cleans up by replacing the device
    dep.kill_device(dep.secondary)
    dep.replace_secondary("recover", recovery_secret=dep.recovery_secret)
    _check(out, "pre-infection-files-recovered",
           dep.primary.decrypt_flow(name="keep.txt") == b"pre-infection")


def stolen_primary(dep: Deployment, out: list[Assertion]) -> None:
    dep.enroll()
    dep.primary.encrypt_flow(b"tax return", "tax.pdf")
    master = dep.master_secret()
    loot = capture_device(dep.primary)
    _check(out, "capture-misses-master",
           subset_sums_miss(dep.group, list(loot.values()), master))
    _expect(out, "thief-fails-identity-verification",
            (VerificationFailed, RecoveryLocked),
            lambda: _drain_verify(dep, "guessed secret"))
    dep.cloud.accounts[dep.account_id].verify_locked_until = 0.0
    dep.kill_device(dep.primary)
    dep.replace_primary("recover", recovery_secret=dep.recovery_secret)
    _check(out, "recovery-restores-decryption",
           dep.primary.decrypt_flow(name="tax.pdf") == b"tax return")
    _check(out, "stale-primary-share-misses-refreshed-master",
           (loot["own_share"] + dep.secondary.state.own_share)
           % dep.group.config.order != dep.master_secret())


def temporary_primary(dep: Deployment, out: list[Assertion]) -> None:
    dep.enroll()
    dep.primary.encrypt_flow(b"exposed without prompts", "low.txt")
    # without prompts the adversary at the keyboard can decrypt (the
    # partially-provided marking); with prompts the user blocks it
    plaintext = dep.primary.decrypt_flow(name="low.txt")
    _check(out, "no-prompts-decryption-succeeds",
           plaintext == b"exposed without prompts")
    dep.secondary.approvals.policy = ApprovalPolicy(mode="prompt",
                                                    approval_window=0)
    dep.secondary.approvals.decider = lambda req: False
    _expect(out, "prompts-block-the-adversary", PolicyDenied,
            lambda: dep.primary.decrypt_flow(name="low.txt"))
    dep.secondary.approvals.policy = ApprovalPolicy(mode="auto")
    # availability: adversary deletes, the trash bin saves the user
    dep.primary.delete_file("low.txt")
    dep.primary.undelete_file("low.txt")
    _check(out, "trash-bin-preserves-availability",
           dep.primary.decrypt_flow(name="low.txt")
           == b"exposed without prompts")


def malware_primary(dep: Deployment, out: list[Assertion]) -> None:
    dep.enroll()
    dep.primary.encrypt_flow(b"pre-infection secret", "pre.txt")
    master = dep.master_secret()
    epoch0_share = dep.primary.state.own_share
    # infected primary reads what it decrypts (expected); prompts stop it
    dep.secondary.approvals.policy = ApprovalPolicy(mode="prompt",
                                                    approval_window=0)
    dep.secondary.approvals.decider = lambda req: False
    _expect(out, "prompts-block-infected-primary", PolicyDenied,
            lambda: dep.primary.decrypt_flow(name="pre.txt"))
    dep.secondary.approvals.policy = ApprovalPolicy(mode="notify")
    # adversary deletes; trash bin undoes it
    dep.primary.delete_file("pre.txt")
    dep.primary.undelete_file("pre.txt")
    _check(out, "pre-infection-files-stay-available",
           dep.primary.decrypt_flow(name="pre.txt") == b"pre-infection secret")
    # cleanup: user replaces the primary; the captured share goes stale
    dep.kill_device(dep.primary)
    dep.replace_primary("recover", recovery_secret=dep.recovery_secret)
    _check(out, "cross-epoch-capture-misses-master",
           (epoch0_share + dep.secondary.state.own_share)
           % dep.group.config.order != dep.master_secret())
    _check(out, "master-unchanged-by-cleanup", dep.master_secret() == master)


# ---------------------------------------------------------------------------
# recovery-attack scenarios (who controls what x what they try to grab)


def attack_primary_recovers_secondary(dep: Deployment,
                                      out: list[Assertion]) -> None:
    dep.enroll()
    dep.primary.encrypt_flow(b"bait", "b.txt")
    # the old secondary is alive and its user pays attention
    dep.secondary.approvals.policy = ApprovalPolicy(mode="prompt",
                                                    approval_window=0)
    prompts = []
    dep.secondary.approvals.decider = lambda req: prompts.append(req) and False
    adv_device = dep._make_secondary(None)
    dep.primary.link = SyncLink(adv_device.handle, dep.primary_log)
    dep.primary.pair(flow="Migrate")
    _expect(out, "alive-old-device-denial-aborts", ApprovalDenied,
            lambda: dep.primary.replace_secondary(
                adv_device.state.device_id, adv_device.claim_recovered_share,
                "migrate"))
    _check(out, "user-was-prompted", len(prompts) == 1,
           f"{len(prompts)} prompts")
    _check(out, "nothing-released", len(dep.cloud.releases) == 0)
    # variant: old secondary offline, adversary lacks the recovery secret
    dep.kill_device(dep.secondary)
    _expect(out, "identity-verification-blocks",
            (VerificationFailed, RecoveryLocked),
            lambda: dep.primary.replace_secondary(
                adv_device.state.device_id, adv_device.claim_recovered_share,
                "recover", recovery_secret="wrong"))
    _check(out, "still-nothing-released", len(dep.cloud.releases) == 0)


def attack_secondary_recovers_primary(dep: Deployment,
                                      out: list[Assertion]) -> None:
    dep.enroll()
    # adversary holds the secondary's token and wants the primary's share
    # routed to a device it controls
    adv_new_primary = dep._make_primary(log=dep.secondary_log,
                                        secondary=dep.secondary)
    adv_new_primary.state.catalog_key = b""
    claim_secret = b"\xee" * 16
    binding = adv_new_primary.state.device_id + claim_secret
    case_id = dep.cloud.recover_request(
        dep.secondary.state.session_token, "migrate", "primary",
        adv_new_primary.state.device_id, binding)
    # the real primary is alive: its user sees the prompt and denies
    dep.primary.approvals.policy = ApprovalPolicy(mode="prompt",
                                                  approval_window=0)
    dep.primary.approvals.decider = lambda req: False
    dep.pump()
    _check(out, "alive-old-primary-denied",
           dep.cloud.case_state(case_id) == "denied")
    _expect(out, "claim-rejected", ApprovalDenied,
            lambda: dep.cloud.claim_release(dep.account_id, case_id,
                                            adv_new_primary.state.device_id,
                                            claim_secret))
    # variant: primary gone, identity verification still blocks
    dep.kill_device(dep.primary)
    case2 = dep.cloud.recover_request(
        dep.secondary.state.session_token, "recover", "primary",
        adv_new_primary.state.device_id, binding)
    while dep.cloud.case_state(case2) == "pinging":
        dep.pump()
    _check(out, "falls-to-verification",
           dep.cloud.case_state(case2) == "await-verification")
    for i in range(3):
        dep.cloud.verify_identity(dep.account_id, "stab in the dark",
                                  b"x%d" % i, case_id=case2)
    _expect(out, "verification-throttled", RecoveryLocked,
            lambda: dep.cloud.verify_identity(dep.account_id,
                                              "stab in the dark", b"x9",
                                              case_id=case2))
    _check(out, "nothing-released", len(dep.cloud.releases) == 0)


def attack_primary_recovers_itself(dep: Deployment,
                                   out: list[Assertion]) -> None:
    dep.enroll()
    master = dep.master_secret()
    prior = capture_device(dep.primary)
    prior_values = set(prior.values())
    # the adversary approves the ping on the device it already controls
    new_primary = dep.replace_primary("migrate")
    _check(out, "self-recovery-succeeds",
           new_primary.state.enrolled and len(dep.cloud.releases) == 1)
    released_value = dep.cloud.accounts[dep.account_id].vault  # post-refresh
    # what the cloud released is the sub-share the old primary itself dealt
    release_log = [w for _cid, w in dep.cloud.releases]
    _check(out, "released-role-is-its-own", release_log == ["primary"])
    _check(out, "released-value-already-held",
           prior["sub_share_cloud"] in prior_values)
    # full post-attack knowledge still misses the master secret
    knowledge = list(prior_values) + [new_primary.state.own_share,
                                      new_primary.state.held_for_peer,
                                      new_primary.state.sub_share_peer,
                                      new_primary.state.sub_share_cloud]
    _check(out, "master-still-out-of-reach",
           subset_sums_miss(dep.group, knowledge, dep.master_secret()))
    _check(out, "master-preserved-for-the-user",
           dep.master_secret() == master)


def attack_secondary_recovers_itself(dep: Deployment,
                                     out: list[Assertion]) -> None:
    dep.enroll()
    master = dep.master_secret()
    prior = capture_device(dep.secondary)
    prior_values = set(prior.values())
    adv_new = dep._make_secondary(None, log=dep.secondary_log)
    claim_secret = b"\xcc" * 16
    case_id = dep.cloud.recover_request(
        dep.secondary.state.session_token, "migrate", "secondary",
        adv_new.state.device_id, adv_new.state.device_id + claim_secret)
    dep.pump()  # controlled old secondary auto-approves its own demise
    _check(out, "self-recovery-approved",
           dep.cloud.case_state(case_id) == "approved")
    released = dep.cloud.claim_release(dep.account_id, case_id,
                                       adv_new.state.device_id, claim_secret)
    _check(out, "released-value-already-held",
           released["sub_share"] in prior_values,
           "cloud share was dealt by the compromised device itself")
    knowledge = list(prior_values) + [released["sub_share"]]
    _check(out, "master-still-out-of-reach",
           subset_sums_miss(dep.group, knowledge, master))


# ---------------------------------------------------------------------------
# cloud adversary and human error


def cloud_adversary(dep: Deployment, out: list[Assertion]) -> None:
    dep.enroll()
    dep.primary.encrypt_flow(b"from the server room", "s.txt")
    dep.primary.refresh_keys()
    dep.primary.encrypt_flow(b"second epoch", "s2.txt")
    master = dep.master_secret()
    acct = dep.cloud.accounts[dep.account_id]
    server_scalars = list(acct.vault.values())
    _check(out, "server-holds-exactly-two-vault-scalars",
           len(server_scalars) == 2)
    _check(out, "server-view-misses-master",
           subset_sums_miss(dep.group, server_scalars, master))
    # and the stored records carry only tag/seed/ciphertext
    for tag, stored in acct.files.items():
        blob = dep.cloud.storage.get(dep.cloud._blob_key(dep.account_id, tag))
        _ = stored.seed  # public by design
        if b"from the server room" in blob or b"second epoch" in blob:
            _check(out, "ciphertext-leaks-plaintext", False, tag.hex())
            return
    _check(out, "no-plaintext-in-stored-blobs", True)


def forgotten_password(dep: Deployment, out: list[Assertion]) -> None:
    dep.enroll()
    dep.primary.encrypt_flow(b"still mine", "f.txt")
    # keys never derive from the password, so a standard credential reset
    # (modeled as re-registering under the reset password) loses nothing
    acct = dep.cloud.accounts[dep.account_id]
    from twofe.cloud import _scrypt

    acct.cred_hash = _scrypt("new password after reset", acct.cred_salt)
    dep.primary.password = "new password after reset"
    dep.primary.state.session_token = b""
    dep.primary.ensure_registered()
    _check(out, "files-survive-password-reset",
           dep.primary.decrypt_flow(name="f.txt") == b"still mine")


def cross_epoch_capture(dep: Deployment, out: list[Assertion]) -> None:
    dep.enroll()
    master = dep.master_secret()
    k_c_epoch0 = dep.primary.state.own_share
    dep.primary.refresh_keys()
    k_d_epoch1 = dep.secondary.state.own_share
    _check(out, "epoch0-primary-plus-epoch1-secondary-misses-master",
           (k_c_epoch0 + k_d_epoch1) % dep.group.config.order != master)
    _check(out, "sanity-current-epoch-still-reconstructs",
           dep.master_secret() == master)


SCENARIOS: list[Scenario] = [
    Scenario("stolen-secondary", "stolen:secondary",
             "thief reads the helper's disk", stolen_secondary),
    Scenario("temporary-secondary", "temporary:secondary",
             "borrowed unlocked helper", temporary_secondary),
    Scenario("malware-secondary", "malware:secondary",
             "helper tampers with its key share", malware_secondary),
    Scenario("stolen-primary", "stolen:primary",
             "thief reads the primary's disk", stolen_primary),
    Scenario("temporary-primary", "temporary:primary",
             "adversary at the unlocked primary", temporary_primary),
    Scenario("malware-primary", "malware:primary",
             "infected primary", malware_primary),
    Scenario("attack-primary-recovers-secondary", None,
             "compromised primary tries to grab the helper share",
             attack_primary_recovers_secondary),
    Scenario("attack-secondary-recovers-primary", None,
             "compromised helper tries to grab the primary share",
             attack_secondary_recovers_primary),
    Scenario("attack-primary-recovers-itself", None,
             "compromised primary replaces itself", attack_primary_recovers_itself),
    Scenario("attack-secondary-recovers-itself", None,
             "compromised helper replaces itself",
             attack_secondary_recovers_itself),
    Scenario("cloud-adversary", "cloud:server",
             "full server-side view", cloud_adversary),
    Scenario("forgotten-password", None,
             "credential reset keeps every file", forgotten_password),
    Scenario("cross-epoch-capture", None,
             "shares stolen in different epochs never combine",
             cross_epoch_capture),
]

# The two bottom rows of the solution-comparison table, as scenario-backed
# markings: "full" needs the assertions to hold outright, "partial" means
# the guarantee is scoped (and the scoping assertion must hold).
TABLE_MARKINGS: dict[str, dict] = {
    "twofe/confidentiality/cloud": {
        "marking": "full",
        "evidence": [("cloud-adversary", "server-view-misses-master")]},
    "twofe/confidentiality/stolen": {
        "marking": "full",
        "evidence": [("stolen-primary", "capture-misses-master"),
                     ("stolen-secondary", "capture-misses-master")]},
    "twofe/confidentiality/temporary": {
        "marking": "partial",
        "evidence": [("temporary-primary", "no-prompts-decryption-succeeds"),
                     ("temporary-secondary",
                      "responses-are-group-elements-not-shares")]},
    "twofe/confidentiality/malware": {
        "marking": "partial",
        "evidence": [("malware-secondary", "wrong-share-detected"),
                     ("malware-primary", "cross-epoch-capture-misses-master")]},
    "twofe/availability/stolen": {
        "marking": "full",
        "evidence": [("stolen-primary", "recovery-restores-decryption"),
                     ("stolen-secondary", "recovery-restores-decryption")]},
    "twofe/availability/temporary": {
        "marking": "full",
        "evidence": [("temporary-primary", "trash-bin-preserves-availability"),
                     ("temporary-secondary", "files-stay-available")]},
    "twofe/availability/malware": {
        "marking": "partial",
        "evidence": [("malware-primary", "pre-infection-files-stay-available"),
                     ("malware-secondary", "pre-infection-files-recovered")]},
    "twofe/availability/forgotten-password": {
        "marking": "full",
        "evidence": [("forgotten-password", "files-survive-password-reset")]},
    "twofe-with-prompts/confidentiality/temporary": {
        "marking": "full",
        "evidence": [("temporary-primary", "prompts-block-the-adversary")]},
    "twofe-with-prompts/confidentiality/malware": {
        "marking": "full",
        "evidence": [("malware-primary", "prompts-block-infected-primary")]},
}


def run_scenario(scenario: Scenario, seed: int) -> Verdict:
    dep = Deployment(seed=seed)
    assertions: list[Assertion] = []
    try:
        scenario.run(dep, assertions)
    except Exception as exc:
        assertions.append(Assertion(name="scenario-crashed", passed=False,
                                    detail=f"{type(exc).__name__}: {exc}"))
    return Verdict(scenario=scenario.name, assertions=assertions)


def run_all(seed: int = 20260809) -> list[Verdict]:
    return [run_scenario(s, seed + i) for i, s in enumerate(SCENARIOS)]


def check_table_markings(verdicts: list[Verdict]) -> list[Assertion]:
    """Each claimed marking must be backed by at least one passing scenario
    assertion."""
    by_name = {v.scenario: v for v in verdicts}
    out = []
    for marking, info in TABLE_MARKINGS.items():
        ok = False
        for scenario_name, assertion_name in info["evidence"]:
            verdict = by_name.get(scenario_name)
            if verdict and any(a.name == assertion_name and a.passed
                               for a in verdict.assertions):
                ok = True
        out.append(Assertion(name=f"table:{marking}", passed=ok,
                             detail=info["marking"]))
    return out
