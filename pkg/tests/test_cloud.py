"""Cloud service: token gating, trash bin, vault accounting, identity
verification throttling, and journal persistence."""

import pytest

from twofe.cloud import (
    CloudService,
    ExternalBlobAdapter,
    TRASH_RETENTION,
    VERIFY_COOLDOWN,
)
from twofe.deploy import FakeClock
from twofe.errors import (
    BadToken,
    DuplicateEnrollment,
    RecoveryLocked,
    TagExists,
    UnknownTag,
)
from twofe.filecrypto import CATALOG_TAG, FileRecord
from twofe.group import seeded_rng


@pytest.fixture
def cloud():
    clock = FakeClock()
    svc = CloudService(clock=clock, rng=seeded_rng(1), ping_timeout=5.0)
    svc.create_account("alice", "pw", "recovery-secret")
    token = svc.register_device("alice", "pw", b"\x01" * 16, "primary")
    return svc, clock, token


def record(tag=b"\x10" * 16, body=b"ciphertext-bytes"):
    return FileRecord(tag=tag, seed=b"\x00" * 32, body=body).encode()


class TestAccounts:
    def test_duplicate_account_rejected(self, cloud):
        svc, _, _ = cloud
        with pytest.raises(DuplicateEnrollment):
            svc.create_account("alice", "pw2", "r2")

    def test_wrong_password_rejected(self, cloud):
        svc, _, _ = cloud
        with pytest.raises(BadToken):
            svc.register_device("alice", "wrong", b"\x02" * 16, "secondary")


class TestTokenGating:
    def test_every_data_endpoint_rejects_dead_tokens(self, cloud):
        svc, _, token = cloud
        svc.file_put(token, record())
        dead = bytes(32)
        endpoints = [
            lambda: svc.file_put(dead, record(tag=b"\x22" * 16)),
            lambda: svc.file_get(dead, b"\x10" * 16),
            lambda: svc.file_delete(dead, b"\x10" * 16),
            lambda: svc.file_undelete(dead, b"\x10" * 16),
            lambda: svc.list_tags(dead),
            lambda: svc.deposit_share(dead, "primary", 1),
            lambda: svc.deposit_catalog_key(dead, b"x"),
            lambda: svc.poll_pings(dead),
            lambda: svc.recover_request(dead, "migrate", "secondary",
                                        b"\x03" * 16, b"b"),
            lambda: svc.invalidate_session(dead, b"\x01" * 16),
        ]
        for call in endpoints:
            with pytest.raises(BadToken):
                call()

    def test_invalidated_token_rejected(self, cloud):
        svc, _, token = cloud
        svc.invalidate_session(token, b"\x01" * 16)  # self-invalidation
        with pytest.raises(BadToken):
            svc.list_tags(token)

    def test_expired_token_rejected(self, cloud):
        svc, clock, token = cloud
        clock.advance(31 * 24 * 3600)
        with pytest.raises(BadToken):
            svc.list_tags(token)

    def test_either_device_can_invalidate_the_other(self, cloud):
        svc, _, token = cloud
        t2 = svc.register_device("alice", "pw", b"\x02" * 16, "secondary")
        svc.invalidate_session(t2, b"\x01" * 16)
        with pytest.raises(BadToken):
            svc.list_tags(token)
        assert svc.list_tags(t2) == []


class TestFileStore:
    def test_put_get_roundtrip(self, cloud):
        svc, _, token = cloud
        svc.file_put(token, record(body=b"abcd"))
        rec = FileRecord.decode(svc.file_get(token, b"\x10" * 16))
        assert rec.body == b"abcd" and rec.seed == b"\x00" * 32

    def test_duplicate_tag_rejected(self, cloud):
        svc, _, token = cloud
        svc.file_put(token, record())
        with pytest.raises(TagExists):
            svc.file_put(token, record(body=b"other"))

    def test_catalog_tag_upserts(self, cloud):
        svc, _, token = cloud
        svc.file_put(token, record(tag=CATALOG_TAG, body=b"v1v1"))
        svc.file_put(token, record(tag=CATALOG_TAG, body=b"v2v2"))
        assert FileRecord.decode(svc.file_get(token, CATALOG_TAG)).body == b"v2v2"

    def test_unknown_tag(self, cloud):
        svc, _, token = cloud
        with pytest.raises(UnknownTag):
            svc.file_get(token, b"\x99" * 16)


class TestTrashBin:
    def test_delete_then_undelete_restores_byte_exact(self, cloud):
        svc, clock, token = cloud
        svc.file_put(token, record(body=b"precious"))
        svc.file_delete(token, b"\x10" * 16)
        with pytest.raises(UnknownTag):
            svc.file_get(token, b"\x10" * 16)
        clock.advance(TRASH_RETENTION / 2)
        svc.file_undelete(token, b"\x10" * 16)
        assert FileRecord.decode(
            svc.file_get(token, b"\x10" * 16)).body == b"precious"

    def test_purged_after_retention(self, cloud):
        svc, clock, token = cloud
        svc.file_put(token, record())
        svc.file_delete(token, b"\x10" * 16)
        clock.advance(TRASH_RETENTION + 1)
        # the session expired along the way; log in again
        token = svc.register_device("alice", "pw", b"\x01" * 16, "primary")
        with pytest.raises(UnknownTag):
            svc.file_undelete(token, b"\x10" * 16)


class TestIdentityVerification:
    def test_correct_secret_true(self, cloud):
        svc, _, _ = cloud
        assert svc.verify_identity("alice", "recovery-secret", b"n1")

    def test_wrong_secret_false(self, cloud):
        svc, _, _ = cloud
        assert not svc.verify_identity("alice", "nope", b"n2")

    def test_replayed_nonce_false_even_after_success(self, cloud):
        svc, _, _ = cloud
        assert svc.verify_identity("alice", "recovery-secret", b"n3")
        assert not svc.verify_identity("alice", "recovery-secret", b"n3")

    def test_three_failures_lock_recovery(self, cloud):
        svc, clock, _ = cloud
        for i in range(3):
            assert not svc.verify_identity("alice", "bad", b"m%d" % i)
        with pytest.raises(RecoveryLocked):
            svc.verify_identity("alice", "recovery-secret", b"m9")
        clock.advance(VERIFY_COOLDOWN + 1)
        assert svc.verify_identity("alice", "recovery-secret", b"m10")


class TestReleaseRouting:
    def test_release_only_to_the_bound_device(self, cloud):
        svc, _, token = cloud
        svc.register_device("alice", "pw", b"\x02" * 16, "secondary")
        svc.deposit_share(token, "secondary", 424242)
        new_id = b"\x0a" * 16
        claim_secret = b"\x0b" * 16
        case_id = svc.recover_request(token, "migrate", "secondary",
                                      new_id, new_id + claim_secret)
        t2 = svc.register_device("alice", "pw", b"\x02" * 16, "secondary")
        svc.auth_respond(t2, case_id, True)
        from twofe.errors import VerificationFailed

        with pytest.raises(VerificationFailed):
            svc.claim_release("alice", case_id, new_id, b"\x0c" * 16)
        with pytest.raises(VerificationFailed):
            svc.claim_release("alice", case_id, b"\x0d" * 16, claim_secret)
        out = svc.claim_release("alice", case_id, new_id, claim_secret)
        assert out["sub_share"] == 424242
        assert svc.releases == [(case_id, "secondary")]


class TestPersistence:
    def test_journal_reload_restores_state(self, tmp_path):
        clock = FakeClock()
        svc = CloudService(persist_dir=str(tmp_path), clock=clock,
                           rng=seeded_rng(2))
        svc.create_account("bob", "pw", "rs")
        token = svc.register_device("bob", "pw", b"\x05" * 16, "primary")
        svc.deposit_share(token, "primary", 12345)
        svc.file_put(token, record(body=b"persisted"))
        svc.file_delete(token, b"\x10" * 16)
        svc.close()

        again = CloudService(persist_dir=str(tmp_path), clock=clock,
                             rng=seeded_rng(3))
        acct = again.accounts["bob"]
        assert acct.vault["primary"] == 12345
        assert acct.files[b"\x10" * 16].deleted_at is not None
        again.file_undelete(token, b"\x10" * 16)
        assert FileRecord.decode(
            again.file_get(token, b"\x10" * 16)).body == b"persisted"
        again.close()

    def test_snapshot_compacts_and_reloads(self, tmp_path):
        clock = FakeClock()
        svc = CloudService(persist_dir=str(tmp_path), clock=clock,
                           rng=seeded_rng(4))
        svc.create_account("carol", "pw", "rs")
        token = svc.register_device("carol", "pw", b"\x06" * 16, "primary")
        svc.file_put(token, record(body=b"snap"))
        svc.snapshot()
        svc.close()

        again = CloudService(persist_dir=str(tmp_path), clock=clock,
                             rng=seeded_rng(5))
        assert FileRecord.decode(
            again.file_get(token, b"\x10" * 16)).body == b"snap"
        again.close()


class TestExternalAdapter:
    def test_passthrough(self):
        remote = {}
        adapter = ExternalBlobAdapter(
            store_fn=remote.__setitem__,
            fetch_fn=remote.__getitem__,
            remove_fn=lambda k: remote.pop(k, None))
        svc = CloudService(storage=adapter, rng=seeded_rng(6))
        svc.create_account("dave", "pw", "rs")
        token = svc.register_device("dave", "pw", b"\x07" * 16, "primary")
        svc.file_put(token, record(body=b"on the other cloud"))
        assert len(remote) == 1
        assert FileRecord.decode(
            svc.file_get(token, b"\x10" * 16)).body == b"on the other cloud"
