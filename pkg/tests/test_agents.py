"""Approval policies, the pending queue, windows, expiry, and audit."""

import threading

import pytest

from twofe.agents import (
    DENIED,
    EXPIRED,
    KIND_DECRYPT,
    KIND_MIGRATE_AUTH,
    REQUEST_EXPIRY,
    ApprovalPolicy,
    ApprovalQueue,
)
from twofe.deploy import FakeClock
from twofe.errors import AlreadyDecided, UnknownRequest

TAG = b"\x01" * 16


def make_queue(mode="prompt", window=0.0, overrides=None):
    clock = FakeClock()
    policy = ApprovalPolicy(mode=mode, approval_window=window,
                            folder_overrides=overrides or {})
    return ApprovalQueue(policy, clock=clock), clock


class TestPolicyResolution:
    def test_folder_override_wins(self):
        policy = ApprovalPolicy(mode="auto",
                                folder_overrides={"tax/": "prompt"})
        assert policy.resolve("tax/2025.pdf") == "prompt"
        assert policy.resolve("pics/cat.jpg") == "auto"

    def test_longest_prefix_wins(self):
        policy = ApprovalPolicy(mode="notify",
                                folder_overrides={"a/": "auto",
                                                  "a/b/": "prompt"})
        assert policy.resolve("a/b/c.txt") == "prompt"
        assert policy.resolve("a/x.txt") == "auto"

    def test_unresolvable_name_uses_default(self):
        policy = ApprovalPolicy(mode="prompt",
                                folder_overrides={"x/": "auto"})
        assert policy.resolve(None) == "prompt"


class TestModes:
    def test_auto_is_silent(self):
        q, _ = make_queue(mode="auto")
        assert q.admit(KIND_DECRYPT, TAG, "f.txt")
        assert q.audit_log() == []

    def test_notify_proceeds_with_audit_record(self):
        q, _ = make_queue(mode="notify")
        assert q.admit(KIND_DECRYPT, TAG, "f.txt")
        log = q.audit_log()
        assert len(log) == 1 and log[0]["outcome"] == "notify"

    def test_prompt_approve_and_deny(self):
        q, _ = make_queue(mode="prompt")
        q.decider = lambda req: True
        assert q.admit(KIND_DECRYPT, TAG, "f.txt")
        q.decider = lambda req: False
        assert not q.admit(KIND_DECRYPT, b"\x02" * 16, "g.txt")


class TestApprovalWindow:
    def test_second_decrypt_within_window_skips_prompt(self):
        q, clock = make_queue(mode="prompt", window=60.0)
        prompts = []
        q.decider = lambda req: prompts.append(req) or True
        assert q.admit(KIND_DECRYPT, TAG, "f.txt")
        clock.advance(30)
        assert q.admit(KIND_DECRYPT, TAG, "f.txt")
        assert len(prompts) == 1
        assert q.audit_log()[-1]["outcome"] == "auto-window"

    def test_outside_window_prompts_again(self):
        q, clock = make_queue(mode="prompt", window=60.0)
        prompts = []
        q.decider = lambda req: prompts.append(req) or True
        assert q.admit(KIND_DECRYPT, TAG, "f.txt")
        clock.advance(61)
        assert q.admit(KIND_DECRYPT, TAG, "f.txt")
        assert len(prompts) == 2

    def test_window_does_not_leak_across_tags(self):
        q, clock = make_queue(mode="prompt", window=60.0)
        prompts = []
        q.decider = lambda req: prompts.append(req) or True
        q.admit(KIND_DECRYPT, TAG, "f.txt")
        q.admit(KIND_DECRYPT, b"\x02" * 16, "g.txt")
        assert len(prompts) == 2


class TestDecisions:
    def test_decide_unknown_request(self):
        q, _ = make_queue()
        with pytest.raises(UnknownRequest):
            q.decide("nope", True)

    def test_second_decide_rejected(self):
        q, _ = make_queue(mode="prompt")
        done = []
        worker = threading.Thread(
            target=lambda: done.append(q.admit(KIND_DECRYPT, TAG, "f")))
        worker.start()
        while not q.pending():
            pass
        rid = q.pending()[0]["request_id"]
        q.decide(rid, True)
        worker.join(timeout=5)
        assert done == [True]
        with pytest.raises(AlreadyDecided):
            q.decide(rid, False)

    def test_expiry_denies(self):
        q, clock = make_queue(mode="prompt")

        def expire_later(req):
            clock.advance(REQUEST_EXPIRY + 1)
            raise RuntimeError("simulate a decider that never answers")

        q.decider = expire_later
        assert not q.admit(KIND_DECRYPT, TAG, "f.txt")
        assert q.all_requests()[0]["decision"] in (DENIED, EXPIRED)

    def test_migrate_auth_prompts_in_prompt_mode(self):
        q, _ = make_queue(mode="prompt")
        seen = []
        q.decider = lambda req: seen.append(req.kind) or False
        assert not q.admit(KIND_MIGRATE_AUTH, TAG, "migrate secondary")
        assert seen == [KIND_MIGRATE_AUTH]

    def test_migrate_auth_headless_in_auto(self):
        q, _ = make_queue(mode="auto")
        assert q.admit(KIND_MIGRATE_AUTH, TAG, "migrate secondary")
        assert q.audit_log()[0]["kind"] == KIND_MIGRATE_AUTH


class TestEvents:
    def test_subscribers_see_request_and_decision(self):
        q, _ = make_queue(mode="prompt")
        sub = q.subscribe()
        q.decider = lambda req: True
        q.admit(KIND_DECRYPT, TAG, "f.txt")
        events = []
        while not sub.empty():
            events.append(sub.get())
        kinds = [e["event"] for e in events]
        assert "request" in kinds and "decision" in kinds
