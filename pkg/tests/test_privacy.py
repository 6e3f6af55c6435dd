import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from verinfer.privacy import (
    AttestationQuote,
    AttestationRoot,
    DecryptionError,
    Enclave,
    EpochStatus,
    KeyUnavailable,
    Label,
    QuotePolicy,
    Role,
    ShamirError,
    ShareDenied,
    TaintedBytes,
    TaintLedger,
    TaintViolation,
    ThresholdKms,
    consistent_polynomial,
    decrypt_payload,
    encrypt_payload,
    interpolate,
    measurement,
    open_session,
    reconstruct,
    reconstruct_in_enclave,
    split_secret,
)
from verinfer.privacy.crypto import open_payload
from verinfer.privacy.shamir import gf_inv, gf_mul, lagrange_at, poly_eval

DIGEST = bytes(range(32))
ROOT = AttestationRoot(b"test-root")


# ---------------------------------------------------------------- oracles

def clmul_mod(a: int, b: int, poly: int = 0x11B) -> int:
    """Bit-serial GF(2^8) multiply, independent of the log/exp tables."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
        if a & 0x100:
            a ^= poly
    return r


def prime_lagrange_at_zero(points, p=257):
    acc = 0
    for j, (xj, yj) in enumerate(points):
        num = den = 1
        for m, (xm, _) in enumerate(points):
            if m != j:
                num = num * (-xm) % p
                den = den * (xj - xm) % p
        acc = (acc + yj * num * pow(den, -1, p)) % p
    return acc


# ---------------------------------------------------------------- field + shamir

def test_gf_mul_against_bitserial_oracle():
    for a in range(256):
        for b in range(0, 256, 7):
            assert gf_mul(a, b) == clmul_mod(a, b)
    assert gf_mul(0x57, 0x83) == 0xC1
    assert all(gf_mul(a, gf_inv(a)) == 1 for a in range(1, 256))


def test_hand_worked_prime_field_example():
    shares = [(x, (42 + 7 * x) % 257) for x in (1, 2, 3)]
    assert [y for _, y in shares] == [49, 56, 63]
    for pair in itertools.combinations(shares, 2):
        assert prime_lagrange_at_zero(list(pair)) == 42


def test_same_polynomial_in_gf256():
    # 42 + 7x with field arithmetic: addition is xor, multiplication carry-less
    shares = [(x, 42 ^ clmul_mod(7, x)) for x in (1, 2, 3)]
    assert shares == [(1, 45), (2, 36), (3, 35)]
    assert [poly_eval([42, 7], x) for x in (1, 2, 3)] == [45, 36, 35]
    for pair in itertools.combinations(shares, 2):
        assert lagrange_at(list(pair)) == 42


def test_degenerate_one_of_one():
    (share,) = split_secret(b"key", 1, 1, b"seed")
    assert share.y == b"key"
    assert reconstruct([share]) == b"key"


@pytest.mark.parametrize("t,n", [(0, 3), (4, 3), (2, 256)])
def test_bad_parameters_rejected(t, n):
    with pytest.raises(ShamirError):
        split_secret(b"k", t, n, b"s")


def test_random_round_trips():
    rng = random.Random(3)
    for _ in range(100):
        n = rng.randint(1, 8)
        t = rng.randint(1, n)
        secret = rng.randbytes(rng.randint(1, 40))
        shares = split_secret(secret, t, n, rng.randbytes(8))
        assert reconstruct(rng.sample(shares, t)) == secret


def test_below_threshold_fails_and_leaks_nothing():
    secret = bytes(range(32))
    shares = split_secret(secret, 3, 5, b"s")
    with pytest.raises(ShamirError):
        reconstruct(shares[:2])
    assert interpolate(shares[:2]) != secret
    for candidate in (secret, bytes(32), b"\xff" * 32):
        coeffs = consistent_polynomial(shares[:2], candidate)
        for b in range(32):
            assert poly_eval(coeffs[b], 0) == candidate[b]
            for s in shares[:2]:
                assert poly_eval(coeffs[b], s.x) == s.y[b]


def test_mixed_epochs_and_duplicates_rejected():
    a = split_secret(b"k" * 4, 2, 3, b"a", epoch=1)
    b = split_secret(b"k" * 4, 2, 3, b"b", epoch=2)
    with pytest.raises(ShamirError):
        reconstruct([a[0], b[1]])
    with pytest.raises(ShamirError):
        reconstruct([a[0], a[0]])


@settings(max_examples=50, deadline=None)
@given(st.binary(min_size=1, max_size=32), st.integers(1, 6).flatmap(lambda n: st.tuples(st.integers(1, n), st.just(n))),
       st.binary(min_size=1, max_size=8))
def test_any_t_subset_reconstructs(secret, tn, seed):
    t, n = tn
    shares = split_secret(secret, t, n, seed)
    for subset in itertools.combinations(shares, t):
        assert reconstruct(subset) == secret


# ---------------------------------------------------------------- attestation

def policy(**kw):
    return QuotePolicy(ROOT.public_bytes, frozenset({measurement(DIGEST)}), **kw)


def test_quote_verifies_and_serializes():
    q = ROOT.attest(measurement(DIGEST), b"n" * 16, 5)
    assert policy().problem(q, now=5) is None
    assert AttestationQuote.from_bytes(q.to_bytes()) == q


def test_unapproved_measurement_rejected():
    q = ROOT.attest(measurement(b"\x01" * 32), b"n" * 16, 0)
    assert policy().problem(q, now=0) == "identity"


def test_forged_quote_rejected():
    q = AttestationRoot(b"impostor").attest(measurement(DIGEST), b"n" * 16, 0)
    assert policy().problem(q, now=0) == "identity"


def test_replayed_nonce_rejected():
    pol = policy()
    q = ROOT.attest(measurement(DIGEST), b"n" * 16, 0)
    assert pol.problem(q, 0) is None
    assert pol.problem(q, 0) == "replay"


def test_freshness_window():
    q = ROOT.attest(measurement(DIGEST), b"m" * 16, 10)
    assert policy().problem(q, 12) is None
    assert policy().problem(q, 13) == "freshness"
    assert policy().problem(q, 9) == "freshness"  # from the future


# ---------------------------------------------------------------- kms

@pytest.fixture
def kms():
    return ThresholdKms(3, 5, ROOT.public_bytes, [measurement(DIGEST)], seed=b"unit")


def test_session_decrypts(kms):
    ct = encrypt_payload(kms.public_key(), b"request", b"output", b"rng", epoch=kms.active.epoch)
    enc = Enclave("v", DIGEST, ROOT)
    with open_session(kms, enc, now=0) as ctx:
        assert decrypt_payload(ctx, ct) == (b"request", b"output")
    assert not ctx.has_key
    assert kms.total_released == 3


def test_zeroize_overwrites(kms):
    ctx = open_session(kms, Enclave("v", DIGEST, ROOT), now=0)
    buf = ctx._key
    assert any(buf)
    ctx.zeroize()
    assert ctx._key is None and not any(buf)
    with pytest.raises(KeyUnavailable):
        decrypt_payload(ctx, b"")


def test_unapproved_image_denied(kms):
    with pytest.raises(ShareDenied) as e:
        open_session(kms, Enclave("v", b"\x09" * 32, ROOT), now=0)
    assert e.value.reason == "identity"
    assert kms.total_released == 0


def test_no_quote_denied(kms):
    enc = Enclave("v", DIGEST, ROOT)
    with pytest.raises(ShareDenied) as e:
        open_session(kms, enc, now=0, presented=(None, b"salt"))
    assert e.value.reason == "identity"
    assert kms.total_released == 0


def test_stale_quote_denied(kms):
    enc = Enclave("v", DIGEST, ROOT)
    old = enc.quote(now=0)
    with pytest.raises(ShareDenied) as e:
        open_session(kms, enc, now=3, presented=old)
    assert e.value.reason == "freshness"
    assert kms.total_released == 0


def test_replayed_quote_denied(kms):
    enc = Enclave("v", DIGEST, ROOT)
    q = enc.quote(now=0)
    open_session(kms, enc, now=0, presented=q).zeroize()
    with pytest.raises(ShareDenied) as e:
        open_session(kms, enc, now=0, presented=q)
    assert e.value.reason == "replay"


def test_quote_bound_to_session_key(kms):
    thief = Enclave("thief", DIGEST, ROOT)
    victim_quote = Enclave("victim", DIGEST, ROOT).quote(now=0)
    with pytest.raises(ShareDenied) as e:
        open_session(kms, thief, now=0, presented=victim_quote)
    assert e.value.reason == "identity"


def test_rotation(kms):
    with pytest.raises(PermissionError):
        kms.rotate_epoch(governance_approval=False)
    enc = Enclave("v", DIGEST, ROOT)
    in_flight = open_session(kms, enc, now=0)
    old_ct = encrypt_payload(kms.public_key(), b"a", b"b", b"r1", epoch=1)
    e2 = kms.rotate_epoch(True, now=1)
    e3 = kms.rotate_epoch(True, now=2)
    assert (e2.epoch, e3.epoch) == (2, 3)
    assert [e.status for e in kms.epochs.values()].count(EpochStatus.ACTIVE) == 1
    assert kms.epochs[1].status is EpochStatus.RETIRED
    with pytest.raises(ShareDenied) as e:
        open_session(kms, enc, now=2, epoch=1)
    assert e.value.reason == "epoch"
    # sessions opened before rotation may finish
    assert decrypt_payload(in_flight, old_ct) == (b"a", b"b")
    ct = encrypt_payload(kms.public_key(), b"x", b"y", b"r2", epoch=3)
    with open_session(kms, enc, now=2) as ctx:
        assert decrypt_payload(ctx, ct) == (b"x", b"y")
        with pytest.raises(DecryptionError):
            decrypt_payload(ctx, old_ct)


def test_reconstruct_checks_epoch_and_threshold(kms):
    enc = Enclave("v", DIGEST, ROOT)
    ctx = enc.context(epoch=1)
    shares = split_secret(b"\x01" * 32, 3, 5, b"z", epoch=1)
    with pytest.raises(ShamirError):
        reconstruct_in_enclave(ctx, shares[:2])
    with pytest.raises(ShamirError):
        reconstruct_in_enclave(enc.context(epoch=2), shares[:3])
    with pytest.raises(ShamirError):
        reconstruct_in_enclave(ctx, shares[:3], expected_public=kms.public_key())


def test_policy_file(kms, tmp_path):
    import json

    p = tmp_path / "policy.json"
    kms.save_policy(p)
    doc = json.loads(p.read_text())
    assert doc["t"] == 3 and doc["n"] == 5 and doc["freshness_window"] == 2
    assert doc["epochs"][0]["status"] == "active"


# ---------------------------------------------------------------- encryption

@settings(max_examples=40, deadline=None)
@given(st.binary(max_size=200), st.binary(max_size=200), st.binary(min_size=1, max_size=8))
def test_payload_round_trip(req, out, seed):
    secret = bytes(range(1, 33))
    from verinfer.privacy.crypto import public_from_private

    ct = encrypt_payload(public_from_private(secret), req, out, seed, epoch=4)
    assert open_payload(secret, ct) == (req, out)


def test_bitflips_fail_authentication():
    from verinfer.privacy.crypto import public_from_private

    secret = bytes(range(1, 33))
    ct = encrypt_payload(public_from_private(secret), b"prompt", b"answer", b"s")
    rng = random.Random(1)
    for pos in range(len(ct)):
        bad = bytearray(ct)
        bad[pos] ^= 1 << rng.randrange(8)
        with pytest.raises(DecryptionError):
            open_payload(secret, bytes(bad))


def test_decrypt_outside_enclave_is_taint_violation():
    with pytest.raises(TaintViolation):
        decrypt_payload(object(), b"")  # type: ignore[arg-type]


# ---------------------------------------------------------------- taint

def test_taint_ledger():
    led = TaintLedger()
    led.observe(Role.CLIENT, "c", TaintedBytes(b"p", Label.PLAINTEXT))
    led.observe(Role.OPERATOR, "o", Label.CIPHERTEXT)
    with pytest.raises(TaintViolation):
        led.observe(Role.OPERATOR, "o", Label.PLAINTEXT, "leak")
    assert len(led.exposures()) == 1
    lax = TaintLedger(strict=False)
    lax.observe(Role.DA, "da", Label.PLAINTEXT)
    assert lax.roles_holding() == {Role.DA}


def test_enclave_decrypt_logged(kms):
    led = TaintLedger()
    enc = Enclave("v", DIGEST, ROOT, ledger=led)
    ct = encrypt_payload(kms.public_key(), b"a", b"b", b"r", epoch=1)
    with open_session(kms, enc, now=0) as ctx:
        decrypt_payload(ctx, ct)
    assert led.roles_holding(Label.PLAINTEXT) == {Role.ENCLAVE}
    assert led.live_keys() == []
