import itertools
import math
from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from verinfer.detcore import DecodePolicy, ExecutionTuple, infer
from verinfer.privacy import Label, Role
from verinfer.protocol import (
    Actor,
    ActorRole,
    Behavior,
    ChallengeRejected,
    Outcome,
    Protocol,
    ProtocolParams,
    RejectedSubmission,
    Status,
    compute_slash,
    sample_committee,
    split_pro_rata,
    tally_upholds,
)
from verinfer.receipts import ResponseMetadata, Registry, hash_commit, reproduce_and_verify, verify_receipt
from verinfer.privacy import open_session

DIGEST = bytes(range(32))
REGISTRY = Registry(containers=frozenset({DIGEST}), drivers=frozenset({"drv-1"}))


def make_exec(seed=1, arch="archA", prompt=(3, 1, 4, 1, 5, 9, 2, 6), max_tokens=4, **kw):
    base = dict(model_id="toy-1", container_digest=DIGEST, arch=arch, driver_tag="drv-1",
                decode_policy=DecodePolicy.top_k(8, max_tokens), seed=seed, prompt=prompt)
    base.update(kw)
    return ExecutionTuple(**base)


def world(op_behavior=Behavior.HONEST, verifier_behaviors=(Behavior.HONEST,) * 5, params=None, **op_kw):
    p = Protocol(params or ProtocolParams(), REGISTRY, seed=b"unit")
    p.register(Actor("op", ActorRole.OPERATOR, 1000, op_behavior, **op_kw))
    p.register(Actor("client", ActorRole.CLIENT, 0))
    p.register(Actor("watcher", ActorRole.WATCHER, 10))
    for i, b in enumerate(verifier_behaviors):
        p.register(Actor(f"v{i}", ActorRole.VERIFIER, 100, b))
    return p


def submit_and_seal(p, exec_=None, op="op"):
    sub = p.submit(op, exec_ or make_exec())
    p.da.seal()  # make proofs available without advancing the clock
    return sub


# ---------------------------------------------------------------- params / tally

def test_params_validation():
    assert ProtocolParams(tau=0.6666666666666666).tau == Fraction(2, 3)
    for bad in [dict(tau=0), dict(tau=1.5), dict(alpha=0.7, beta=0.5), dict(delta=-1), dict(committee_size=0), dict(s_slash=0)]:
        with pytest.raises(ValueError):
            ProtocolParams(**bad)


def test_tau_boundary_inclusive():
    assert tally_upholds([True, True, False], Fraction(2, 3)) == (Fraction(2, 3), True)
    assert tally_upholds([True, False, None], Fraction(2, 3))[1] is False


@pytest.mark.parametrize("n", range(3, 10))
def test_tally_matches_bruteforce(n):
    tau = Fraction(2, 3)
    for votes in itertools.product([True, False, None], repeat=n):
        yes = sum(1 for v in votes if v is True)
        assert tally_upholds(list(votes), tau)[1] == (3 * yes >= 2 * n)


# ---------------------------------------------------------------- slashing

def test_slash_worked_example():
    params = ProtocolParams(alpha=Fraction(1, 5), beta=Fraction(3, 10), s_slash=100)
    r = compute_slash(1000, params, [("a", 1), ("b", 1), ("c", 1)], "ch")
    assert (r.challenger_reward, sum(r.committee_rewards.values()), r.burned) == (20, 30, 50)
    assert r.committee_rewards == {"a": 10, "b": 10, "c": 10}


def test_slash_full_burn_and_cap():
    r = compute_slash(1000, ProtocolParams(alpha=0, beta=0, s_slash=100), [("a", 5)], "ch")
    assert r.burned == 100 and r.challenger_reward == 0
    capped = compute_slash(40, ProtocolParams(s_slash=100), [("a", 5)], "ch")
    assert capped.amount == 40 and capped.capped


@given(
    st.integers(0, 10**6),
    st.integers(1, 10**5),
    st.fractions(0, 1),
    st.fractions(0, 1),
    st.lists(st.integers(0, 1000), min_size=1, max_size=9),
)
def test_slash_conservation(stake, s, a, b, stakes):
    if a + b > 1:
        b = 1 - a
    r = compute_slash(stake, ProtocolParams(alpha=a, beta=b, s_slash=s), [(f"v{i}", w) for i, w in enumerate(stakes)], "ch")
    assert r.challenger_reward + sum(r.committee_rewards.values()) + r.burned == r.amount == min(stake, s)
    assert r.burned >= 0 and min(r.committee_rewards.values()) >= 0


def test_largest_remainder():
    assert split_pro_rata(10, [("a", 1), ("b", 1), ("c", 1)]) == {"a": 4, "b": 3, "c": 3}
    assert split_pro_rata(7, [("a", 3), ("b", 1)]) == {"a": 5, "b": 2}


# ---------------------------------------------------------------- committee

def test_committee_uniform_frequency():
    vs = [Actor(f"v{i}", ActorRole.VERIFIER, 50) for i in range(10)]
    k, draws = 3, 100_000
    counts = Counter()
    for d in range(draws):
        for m in sample_committee(vs, k, d.to_bytes(4, "big")):
            counts[m.id] += 1
    p = k / len(vs)
    sigma = math.sqrt(draws * p * (1 - p))
    for v in vs:
        assert abs(counts[v.id] - draws * p) < 3 * sigma


def test_committee_weighted_and_deterministic():
    vs = [Actor("big", ActorRole.VERIFIER, 100), Actor("zero", ActorRole.VERIFIER, 0)]
    assert [m.id for m in sample_committee(vs, 1, b"x")] == ["big"]
    many = [Actor(f"v{i}", ActorRole.VERIFIER, i + 1) for i in range(8)]
    assert sample_committee(many, 4, b"s") == sample_committee(many, 4, b"s")
    assert len({m.id for m in sample_committee(many, 8, b"s")}) == 8
    with pytest.raises(ValueError):
        sample_committee([], 1, b"s")
    with pytest.raises(ValueError):
        sample_committee(many, 9, b"s")


# ---------------------------------------------------------------- submission

def test_honest_submission_and_reproduction():
    p = world()
    sub = submit_and_seal(p)
    assert sub.status is Status.PENDING
    assert verify_receipt(sub.receipt, p.actors["op"].public_bytes, REGISTRY)
    assert sub.receipt.out_hash == hash_commit(infer(make_exec()).canonical_bytes)
    enc = p.enclave("auditor", DIGEST)
    verdict = reproduce_and_verify(
        str(sub.da_pointer), ResponseMetadata.for_receipt(sub.receipt),
        lambda e: open_session(p.kms, enc, p.now, e), da=p.da,
        operator_pubkey=p.actors["op"].public_bytes, registry=REGISTRY, request_hash=sub.request_hash,
    )
    assert verdict.ok, verdict.detail


def test_submit_preconditions():
    p = world()
    p.register(Actor("broke", ActorRole.OPERATOR, 0))
    with pytest.raises(RejectedSubmission):
        p.submit("broke", make_exec())
    with pytest.raises(RejectedSubmission):
        p.submit("op", make_exec(arch="archZ"))
    with pytest.raises(RejectedSubmission):
        p.submit("op", make_exec(driver_tag="drv-unpinned"))
    with pytest.raises(RejectedSubmission):
        p.submit("op", make_exec(container_digest=b"\x07" * 32))
    assert p.submissions == [] and len(p.da.open_batch.leaves) == 0


def test_falsifying_operator_receipt_disagrees_with_truth():
    p = world(Behavior.FALSIFY_OUTPUT)
    truth = hash_commit(infer(make_exec()).canonical_bytes)
    subs = [p.submit("op", make_exec(seed=s)) for s in range(6)]
    variants = {s.receipt.out_hash == hash_commit(infer(make_exec(seed=i)).canonical_bytes) for i, s in enumerate(subs)}
    assert variants == {True, False}  # both lying strategies occur
    assert all(s.fraud for s in subs)
    assert subs[0].receipt.out_hash != truth or subs[0].fraud


# ---------------------------------------------------------------- challenges

def test_honest_challenge_upheld():
    p = world(verifier_behaviors=(Behavior.HONEST,) * 3)
    sub = submit_and_seal(p)
    v = p.full_challenge(sub, "watcher")
    assert v.bits == [1, 1, 1] and v.outcome is Outcome.UPHELD
    assert sub.status is Status.FINALIZED and v.majority_output_hash == sub.receipt.out_hash
    assert p.actors["op"].stake == 1000


def test_falsified_output_slashed():
    p = world(Behavior.FALSIFY_OUTPUT)
    before = p.total_stake()
    for seed in range(4):
        sub = submit_and_seal(p, make_exec(seed=seed))
        v = p.full_challenge(sub, "watcher")
        assert v.outcome is Outcome.SLASHED and 0 in v.bits
        assert sub.status is Status.SLASHED
        if v.reason == "output_mismatch":
            assert v.majority_output_hash != sub.receipt.out_hash
    assert p.actors["op"].stake == 1000 - 4 * 100
    assert p.total_stake() + p.burned == before


def test_two_of_three_upholds():
    p = world(verifier_behaviors=(Behavior.HONEST, Behavior.HONEST, Behavior.OFFLINE))
    sub = submit_and_seal(p)
    v = p.full_challenge(sub, "watcher")
    assert sorted(v.bits) == [0, 1, 1] and v.tally == Fraction(2, 3) and v.outcome is Outcome.UPHELD


def test_abstentions_count_against():
    p = world(verifier_behaviors=(Behavior.HONEST, Behavior.OFFLINE, Behavior.OFFLINE))
    v = p.full_challenge(submit_and_seal(p), "watcher")
    assert v.outcome is Outcome.SLASHED and v.reason == "insufficient_votes"


def test_colluding_minority_cannot_save_fraud():
    p = world(Behavior.FALSIFY_OUTPUT, (Behavior.COLLUDING,) + (Behavior.HONEST,) * 4,
              params=ProtocolParams(committee_size=5))
    v = p.full_challenge(submit_and_seal(p), "watcher")
    assert v.outcome is Outcome.SLASHED
    assert p.log.events("fork_choice_backstop") == []


def test_colluding_majority_triggers_backstop_event():
    p = world(Behavior.FALSIFY_OUTPUT, (Behavior.COLLUDING,) * 3)
    v = p.full_challenge(submit_and_seal(p), "watcher")
    assert v.outcome is Outcome.UPHELD
    assert len(p.log.events("fork_choice_backstop")) == 1


def test_withheld_da_slashes_operator():
    p = world(Behavior.WITHHOLD_DA)
    sub = submit_and_seal(p)
    report = p.light_audit(sub, p.pick_auditors(sub))
    assert {r for _, r in report.results} == {"unavailable"}
    v = p.full_challenge(sub, "watcher")
    assert v.outcome is Outcome.SLASHED and v.reason == "unavailable"


def test_replayed_receipt_fails_request_binding():
    p = world(Behavior.REPLAY_STALE_RECEIPT)
    first = submit_and_seal(p, make_exec(seed=1))
    assert not first.fraud  # nothing to replay yet
    second = submit_and_seal(p, make_exec(seed=2))
    assert second.receipt.req_hash == first.receipt.req_hash != second.request_hash
    v = p.full_challenge(second, "watcher")
    assert v.outcome is Outcome.SLASHED and v.reason == "request_mismatch"


def test_substituted_container_detected():
    p = world(Behavior.SUBSTITUTE_CONTAINER)
    sub = submit_and_seal(p)
    assert verify_receipt(sub.receipt, p.actors["op"].public_bytes, REGISTRY)  # the signature alone looks fine
    v = p.full_challenge(sub, "watcher")
    assert v.outcome is Outcome.SLASHED and v.reason == "output_mismatch"


def test_cross_arch_drift_detected():
    p = world(hardware_arch="archB")
    v = p.full_challenge(submit_and_seal(p), "watcher")
    assert v.outcome is Outcome.SLASHED


def test_batched_operator_never_slashed():
    p = world(batch_size=5)
    for seed in range(3):
        v = p.full_challenge(submit_and_seal(p, make_exec(seed=seed)), "watcher")
        assert v.outcome is Outcome.UPHELD


def test_light_audit_reports():
    p = world()
    sub = submit_and_seal(p)
    rep = p.light_audit(sub, p.pick_auditors(sub))
    assert not rep.mismatch and len(rep.results) == 2
    stakes = {a.id: a.stake for a in p.actors.values()}
    bad = world(Behavior.FALSIFY_OUTPUT)
    bsub = submit_and_seal(bad)
    assert bad.light_audit(bsub, bad.pick_auditors(bsub)).mismatch
    assert {a.id: a.stake for a in p.actors.values()} == stakes  # audits never move stake
    assert bsub.status is Status.PENDING


# ---------------------------------------------------------------- window + status

def test_window_and_finalization():
    p = world(params=ProtocolParams(delta=2))
    sub = p.submit("op", make_exec())
    p.advance()
    p.advance()
    assert sub.status is Status.PENDING
    assert p.full_challenge(sub, "watcher").outcome is Outcome.UPHELD
    later = p.submit("op", make_exec(seed=5))
    for _ in range(3):
        p.advance()
    assert later.status is Status.FINALIZED and later.settled_at == p.now
    with pytest.raises(ChallengeRejected):
        p.full_challenge(later, "watcher")


def test_challenge_after_window_rejected():
    p = world(params=ProtocolParams(delta=1))
    sub = p.submit("op", make_exec())
    p.now += 2  # skip finalization to isolate the window check
    with pytest.raises(ChallengeRejected):
        p.full_challenge(sub, "watcher")


def test_delta_zero_immediate():
    p = world(params=ProtocolParams(delta=0))
    assert p.submit("op", make_exec()).status is Status.FINALIZED


def test_no_transition_out_of_terminal():
    p = world(Behavior.FALSIFY_OUTPUT)
    sub = submit_and_seal(p)
    p.full_challenge(sub, "watcher")
    with pytest.raises(ChallengeRejected):
        p.full_challenge(sub, "watcher")
    for _ in range(5):
        p.advance()
    assert sub.status is Status.SLASHED


# ---------------------------------------------------------------- privacy + logs

def test_plaintext_only_client_and_enclave():
    p = world(Behavior.FALSIFY_OUTPUT)
    sub = submit_and_seal(p)
    p.full_challenge(sub, "watcher")
    assert p.ledger.roles_holding(Label.PLAINTEXT) <= {Role.CLIENT, Role.ENCLAVE}
    assert p.ledger.exposures() == [] and p.ledger.live_keys() == []


def test_key_gating_probes():
    p = world()
    captured = p.enclave("rogue", DIGEST).quote(p.now)
    assert p.rogue_share_request("anon", "no_quote") == "identity"
    assert p.rogue_share_request("fake", "wrong_image") == "identity"
    for _ in range(3):
        p.advance()
    assert p.rogue_share_request("rogue", "stale_quote", captured) == "freshness"
    assert p.kms.total_released == 0


def test_event_log_is_ndjson():
    p = world()
    submit_and_seal(p)
    kinds = [e["event"] for e in p.log.events()]
    assert kinds[:2] == ["submit", "publish"]
    assert p.log.text().count("\n") == len(p.log.lines)
