"""Group layer: encodings, hash domains, commitments, and the randomness
quality the rest of the stack leans on."""

import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twofe.errors import EncodingError
from twofe.group import (
    frame,
    production_group,
    seeded_rng,
    toy_group,
)

GROUP = production_group()


class TestScalars:
    def test_random_draws_distinct(self):
        rng = seeded_rng(101)
        draws = {GROUP.scalar_random(rng) for _ in range(1000)}
        assert len(draws) == 1000

    def test_encode_decode_roundtrip(self):
        rng = seeded_rng(7)
        for _ in range(200):
            s = GROUP.scalar_random(rng)
            assert GROUP.scalar_decode(GROUP.scalar_encode(s)) == s

    def test_decode_rejects_bad_length(self):
        with pytest.raises(EncodingError):
            GROUP.scalar_decode(b"\x00" * 31)

    def test_decode_rejects_non_canonical(self):
        too_big = (GROUP.config.order).to_bytes(32, "big")
        with pytest.raises(EncodingError):
            GROUP.scalar_decode(too_big)

    @given(st.integers(min_value=0, max_value=GROUP.config.order - 1),
           st.integers(min_value=0, max_value=GROUP.config.order - 1))
    @settings(max_examples=50)
    def test_add_then_subtract_is_identity(self, a, b):
        assert GROUP.scalar_sub(GROUP.scalar_add(a, b), b) == a

    def test_uniformity_chi_square(self):
        # 256 equal-width buckets over [0, p); 1e5 draws; alpha = 0.01.
        from scipy.stats import chi2

        rng = seeded_rng(20260809)
        n = 100_000
        buckets = [0] * 256
        p = GROUP.config.order
        for _ in range(n):
            buckets[(GROUP.scalar_random(rng) * 256) // p] += 1
        expected = n / 256
        stat = sum((c - expected) ** 2 / expected for c in buckets)
        assert stat < chi2.ppf(0.99, 255)

    def test_low_order_byte_frequency_chi_square(self):
        # Byte frequencies of encodings, skipping the top byte (the order is
        # slightly below 2^253 so the leading byte is structurally skewed).
        from scipy.stats import chi2

        rng = seeded_rng(99)
        counts = [0] * 256
        n_draws = 4000
        for _ in range(n_draws):
            for byte in GROUP.scalar_encode(GROUP.scalar_random(rng))[1:]:
                counts[byte] += 1
        total = n_draws * 31
        expected = total / 256
        stat = sum((c - expected) ** 2 / expected for c in counts)
        assert stat < chi2.ppf(0.99, 255)


class TestElements:
    def test_generator_roundtrip(self):
        enc = GROUP.generator.encoding
        assert GROUP.element_decode(enc) == GROUP.generator

    def test_base_mult_matches_scalar_mult(self):
        rng = seeded_rng(3)
        for _ in range(25):
            k = GROUP.scalar_random(rng)
            assert GROUP.base_mult(k) == GROUP.scalar_mult(k, GROUP.generator)

    def test_identity(self):
        assert GROUP.scalar_mult(0, GROUP.generator) == GROUP.identity
        assert GROUP.base_mult(GROUP.config.order) == GROUP.identity

    def test_add_sub(self):
        rng = seeded_rng(4)
        a = GROUP.base_mult(GROUP.scalar_random(rng))
        b = GROUP.base_mult(GROUP.scalar_random(rng))
        assert GROUP.element_sub(GROUP.element_add(a, b), b) == a

    def test_decode_rejects_garbage(self):
        with pytest.raises(EncodingError):
            GROUP.element_decode(b"\xff" * 32)
        with pytest.raises(EncodingError):
            GROUP.element_decode(b"\x01" * 31)


class TestHashToGroup:
    def test_deterministic(self):
        assert GROUP.hash_to_group(b"x") == GROUP.hash_to_group(b"x")

    def test_distinct_inputs_distinct_outputs(self):
        assert GROUP.hash_to_group(b"a") != GROUP.hash_to_group(b"b")

    def test_rejects_empty(self):
        with pytest.raises(EncodingError):
            GROUP.hash_to_group(b"")

    def test_outputs_are_valid_subgroup_elements(self):
        # Decode(encode(.)) succeeding proves membership: the decoder rejects
        # anything outside the prime-order group.
        rng = seeded_rng(8)
        for _ in range(10_000):
            el = GROUP.hash_to_group(rng.randbytes(24))
            assert el != GROUP.identity
            assert GROUP.element_decode(el.encoding) == el


class TestDomainSeparation:
    def test_framing_is_injective_on_order(self):
        a = GROUP.hash_to_scalar(b"D", [b"ab", b"cd"])
        b = GROUP.hash_to_scalar(b"D", [b"cd", b"ab"])
        assert a != b

    def test_framing_is_injective_on_split(self):
        assert GROUP.hash_to_scalar(b"D", [b"ab"]) != \
            GROUP.hash_to_scalar(b"D", [b"a", b"b"])

    def test_distinct_domains_differ(self):
        assert GROUP.hash_to_scalar(b"D1", [b"x"]) != \
            GROUP.hash_to_scalar(b"D2", [b"x"])

    def test_hash_to_scalar_golden_vector(self):
        # Frozen at build time against the framed-SHA-512 construction.
        digest = hashlib.sha512(frame(b"2FE-TEST", [b"golden"])).digest()
        assert digest.hex() == (
            "2c67682295422228afc27e07f413ecc04ca8c36cf8a7d6459ca5f39a1f590dbd"
            "a15dd92fd2ade6ca25824e7ffe5f0cc1ac38d2ece22dfa6e8286590aa5398604"
        )
        expected = int.from_bytes(digest, "big") % GROUP.config.order
        assert GROUP.hash_to_scalar(b"2FE-TEST", [b"golden"]) == expected


class TestCommitments:
    def test_commit_verifies(self):
        rng = seeded_rng(11)
        s0 = rng.randbytes(32)
        assert GROUP.commit_verify(GROUP.commit(s0), s0)

    def test_flipped_bit_fails(self):
        rng = seeded_rng(12)
        s0 = rng.randbytes(32)
        c = GROUP.commit(s0)
        flipped = bytes([s0[0] ^ 1]) + s0[1:]
        assert not GROUP.commit_verify(c, flipped)

    def test_rejects_bad_length(self):
        with pytest.raises(EncodingError):
            GROUP.commit(b"\x00" * 31)

    def test_golden_vector_all_zero(self):
        # Frozen at build time: SHA-256 over the framed all-zero preimage.
        expected = hashlib.sha256(frame(b"2FE-COMMIT", [b"\x00" * 32])).digest()
        assert GROUP.commit(b"\x00" * 32) == expected
        assert expected.hex() == (
            "7d6b1992918c901296ce7bb08422f2f29a10f2f045c2a856553eee0ea1a306c8"
        )


class TestToyGroup:
    def test_scalar_times_generator_is_scalar(self):
        toy = toy_group()
        for k in range(101):
            assert toy.base_mult(k).raw == k % 101

    def test_hash_to_group_is_stub_13(self):
        toy = toy_group()
        assert toy.hash_to_group(b"anything").raw == 13
        assert toy.hash_to_group(b"else").raw == 13

    def test_arithmetic_mod_101(self):
        toy = toy_group()
        a = toy.base_mult(70)
        b = toy.base_mult(40)
        assert toy.element_add(a, b).raw == 9  # 110 mod 101
        assert toy.scalar_mult(7, toy.base_mult(13)).raw == 91
