"""Optimistic verification state machine.

Operators execute, commit and publish; results finalize after ``delta``
epochs unless challenged. A challenge samples a stake-weighted committee whose
members each attest, obtain the payload key, re-execute and vote on byte
equality. A tally below ``tau`` slashes the operator.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import logging
import random
import struct
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Optional, Sequence, Union

from .da import DaError, DaStore, DataUnavailable, DaPointer, verify_inclusion
from .detcore import VOCAB_SIZE, ExecutionTuple, InferenceOutput, infer, infer_batch
from .privacy import (
    AttestationRoot,
    DecryptionError,
    Enclave,
    KeyUnavailable,
    Label,
    Role,
    ShareDenied,
    TaintLedger,
    ThresholdKms,
    decrypt_payload,
    encrypt_payload,
    measurement,
    open_session,
)
from .receipts import (
    CodecError,
    Receipt,
    Registry,
    SigningKey,
    decode_exec,
    encode_exec,
    hash_commit,
    make_receipt,
    pack_record,
    receipt_problems,
    unpack_record,
)

log = logging.getLogger(__name__)


class ProtocolError(Exception):
    pass


class RejectedSubmission(ProtocolError):
    pass


class ChallengeRejected(ProtocolError):
    pass


def as_fraction(x: Union[Fraction, float, int, str]) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**6)
    return Fraction(x)


@dataclass(frozen=True)
class ProtocolParams:
    delta: int = 2
    tau: Fraction = Fraction(2, 3)
    committee_size: int = 3
    light_audit_size: int = 2
    alpha: Fraction = Fraction(1, 5)
    beta: Fraction = Fraction(3, 10)
    s_slash: int = 100

    def __post_init__(self) -> None:
        for name in ("tau", "alpha", "beta"):
            object.__setattr__(self, name, as_fraction(getattr(self, name)))
        problems = []
        if self.delta < 0:
            problems.append("delta must be >= 0")
        if not 0 < self.tau <= 1:
            problems.append("tau must lie in (0, 1]")
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta > 1:
            problems.append("alpha, beta must be >= 0 with alpha + beta <= 1")
        if self.committee_size < 1 or self.light_audit_size < 1:
            problems.append("committee_size and light_audit_size must be positive")
        if self.s_slash <= 0:
            problems.append("s_slash must be positive")
        if problems:
            raise ValueError("; ".join(problems))
        if self.delta == 0:
            log.warning("delta=0: submissions finalize immediately and cannot be challenged")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for name in ("tau", "alpha", "beta"):
            d[name] = str(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ProtocolParams:
        return cls(**d)


class ActorRole(enum.Enum):
    CLIENT = "client"
    OPERATOR = "operator"
    VERIFIER = "verifier"
    WATCHER = "watcher"


class Behavior(enum.Enum):
    HONEST = "honest"
    FALSIFY_OUTPUT = "falsify_output"
    SUBSTITUTE_CONTAINER = "substitute_container"
    REPLAY_STALE_RECEIPT = "replay_stale_receipt"
    WITHHOLD_DA = "withhold_da"
    COLLUDING = "colluding_verifiers"
    OFFLINE = "offline"


OPERATOR_BEHAVIORS = {
    Behavior.HONEST,
    Behavior.FALSIFY_OUTPUT,
    Behavior.SUBSTITUTE_CONTAINER,
    Behavior.REPLAY_STALE_RECEIPT,
    Behavior.WITHHOLD_DA,
}
VERIFIER_BEHAVIORS = {Behavior.HONEST, Behavior.COLLUDING, Behavior.OFFLINE}


@dataclass
class Actor:
    id: str
    role: ActorRole
    stake: int = 0
    behavior: Behavior = Behavior.HONEST
    # operator hardware: actual arch used when it differs from the declared one
    hardware_arch: Optional[str] = None
    batch_size: Optional[int] = None

    def __post_init__(self) -> None:
        if self.stake < 0:
            raise ValueError(f"{self.id}: stake must be non-negative")
        self.key = SigningKey.from_seed(b"actor:" + self.id.encode())

    @property
    def public_bytes(self) -> bytes:
        return self.key.public_bytes


class Status(enum.Enum):
    PENDING = "pending"
    FINALIZED = "finalized"
    SLASHED = "slashed"


@dataclass
class Submission:
    id: int
    operator: str
    client: str
    request_hash: bytes  # the client's own commitment to its request
    ciphertext: bytes
    receipt: Receipt
    da_pointer: DaPointer
    published_at: int
    status: Status = Status.PENDING
    # simulator ground truth, never consulted by verifiers
    exec: Optional[ExecutionTuple] = field(default=None, repr=False)
    fraud: bool = False
    challenged: bool = False
    final_output_hash: Optional[bytes] = None
    settled_at: Optional[int] = None

    def _transition(self, new: Status, now: int) -> None:
        if self.status is not Status.PENDING:
            raise ProtocolError(f"submission {self.id} already {self.status.value}")
        self.status = new
        self.settled_at = now


class Outcome(enum.Enum):
    UPHELD = "upheld"
    SLASHED = "slashed"


@dataclass(frozen=True)
class VoteRecord:
    verifier: str
    stake: int
    vote: Optional[bool]  # None is an abstention
    reason: str
    output_hash: Optional[bytes] = None


@dataclass(frozen=True)
class SlashResult:
    amount: int
    capped: bool
    challenger: str
    challenger_reward: int
    committee_rewards: dict
    burned: int


@dataclass(frozen=True)
class ChallengeVerdict:
    submission: int
    committee: tuple[tuple[str, int], ...]
    votes: tuple[VoteRecord, ...]
    tally: Fraction
    outcome: Outcome
    majority_output_hash: Optional[bytes]
    reason: str
    slash: Optional[SlashResult] = None

    @property
    def bits(self) -> list[int]:
        return [1 if v.vote else 0 for v in self.votes]


@dataclass(frozen=True)
class AuditReport:
    submission: int
    results: tuple[tuple[str, str], ...]  # (auditor, match|mismatch|unavailable|denied|invalid)

    @property
    def mismatch(self) -> bool:
        return any(r != "match" for _, r in self.results)


def tally_upholds(votes: Sequence[Optional[bool]], tau: Fraction) -> tuple[Fraction, bool]:
    """Count-based tally; abstentions count against upholding."""
    if not votes:
        raise ValueError("empty committee")
    frac = Fraction(sum(1 for v in votes if v), len(votes))
    return frac, frac >= tau


def sample_committee(verifiers: Sequence[Actor], size: int, seed: bytes) -> list[Actor]:
    """Stake-weighted draws without replacement, deterministic in ``seed``."""
    pool = [v for v in verifiers if v.stake > 0]
    if not pool:
        raise ValueError("no staked verifiers to sample from")
    if size > len(pool):
        raise ValueError(f"committee of {size} exceeds {len(pool)} staked verifiers")
    rng = random.Random(hashlib.sha256(b"committee" + seed).digest())
    chosen = []
    for _ in range(size):
        r = rng.randrange(sum(v.stake for v in pool))
        for i, v in enumerate(pool):
            r -= v.stake
            if r < 0:
                chosen.append(pool.pop(i))
                break
    return chosen


def split_pro_rata(pool: int, weights: Sequence[tuple[str, int]]) -> dict[str, int]:
    """Integer split by largest remainder; ties go to earlier entries."""
    total = sum(w for _, w in weights)
    if total == 0:
        weights = [(k, 1) for k, _ in weights]
        total = len(weights)
    shares = {k: pool * w // total for k, w in weights}
    left = pool - sum(shares.values())
    order = sorted(range(len(weights)), key=lambda i: (-(pool * weights[i][1] % total), i))
    for i in order[:left]:
        shares[weights[i][0]] += 1
    return shares


def compute_slash(stake: int, params: ProtocolParams, committee: Sequence[tuple[str, int]], challenger: str) -> SlashResult:
    amount = min(params.s_slash, stake)
    capped = amount < params.s_slash
    to_challenger = int(params.alpha * amount)  # floor; both are non-negative
    pool = int(params.beta * amount)
    rewards = split_pro_rata(pool, committee) if committee else {}
    burned = amount - to_challenger - sum(rewards.values())
    return SlashResult(amount, capped, challenger, to_challenger, rewards, burned)


def corrupt_output(out: InferenceOutput) -> InferenceOutput:
    """Smallest plausible lie: change the last token (or invent one)."""
    if out.tokens:
        toks = out.tokens[:-1] + ((out.tokens[-1] + 1) % VOCAB_SIZE,)
    else:
        toks = (0,)
    return InferenceOutput(toks, out.logits_trace)


def _hex(x: Any) -> Any:
    if isinstance(x, (bytes, bytearray)):
        return bytes(x).hex()
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    if isinstance(x, enum.Enum):
        return x.value
    if isinstance(x, (list, tuple)):
        return [_hex(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _hex(v) for k, v in x.items()}
    return x


class EventLog:
    """Newline-delimited JSON, one object per protocol event."""

    def __init__(self) -> None:
        self.lines: list[str] = []

    def emit(self, kind: str, epoch: int, **fields: Any) -> None:
        rec = {"epoch": epoch, "event": kind, **{k: _hex(v) for k, v in fields.items()}}
        self.lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def events(self, kind: Optional[str] = None) -> list[dict]:
        out = [json.loads(line) for line in self.lines]
        return [e for e in out if kind is None or e["event"] == kind]


class Protocol:
    """All shared state of one simulated deployment."""

    def __init__(
        self,
        params: ProtocolParams,
        registry: Registry,
        *,
        seed: bytes = b"protocol",
        kms_threshold: tuple[int, int] = (2, 3),
        chain_id: str = "verinfer-local",
        ledger: Optional[TaintLedger] = None,
    ) -> None:
        if not registry.containers:
            raise ValueError("registry must approve at least one container digest")
        self.params = params
        self.registry = registry
        self.seed = seed
        self.chain_id = chain_id
        self.now = 0
        self.da = DaStore(first_slot=0)
        self.log = EventLog()
        self.ledger = ledger if ledger is not None else TaintLedger(strict=False)
        self.root = AttestationRoot(b"attestation-root:" + seed)
        t, n = kms_threshold
        self.kms = ThresholdKms(
            t, n, self.root.public_bytes, [measurement(d) for d in sorted(registry.containers)], seed=b"kms:" + seed
        )
        self.actors: dict[str, Actor] = {}
        self.submissions: list[Submission] = []
        self._pending: list[Submission] = []
        self.burned = 0
        self.verdicts: list[ChallengeVerdict] = []
        self._enclaves: dict[tuple[str, bytes], Enclave] = {}

    # ------------------------------------------------------------ registry

    def register(self, actor: Actor) -> Actor:
        if actor.id in self.actors:
            raise ValueError(f"duplicate actor id {actor.id!r}")
        self.actors[actor.id] = actor
        return actor

    def verifiers(self) -> list[Actor]:
        return [a for a in self.actors.values() if a.role is ActorRole.VERIFIER]

    def total_stake(self) -> int:
        return sum(a.stake for a in self.actors.values())

    def enclave(self, owner: str, container: bytes) -> Enclave:
        key = (owner, container)
        if key not in self._enclaves:
            self._enclaves[key] = Enclave(owner, container, self.root, ledger=self.ledger)
        return self._enclaves[key]

    # ------------------------------------------------------------ clock

    def advance(self) -> list[Submission]:
        """Seal this epoch's DA batch, step the clock, finalize and prune."""
        root = self.da.seal()
        self.log.emit("seal", self.now, slot=self.now, root=root)
        self.now += 1
        done = self.finalize_expired(self.now)
        self.da.prune(self.now - (self.params.delta + 1))
        return done

    def finalize_expired(self, now: int) -> list[Submission]:
        done = []
        self._pending = [s for s in self._pending if s.status is Status.PENDING]
        for s in self._pending:
            if s.published_at + self.params.delta < now:
                s._transition(Status.FINALIZED, now)
                s.final_output_hash = s.receipt.out_hash
                self.log.emit("finalize", now, submission=s.id, operator=s.operator, out_hash=s.receipt.out_hash)
                done.append(s)
        return done

    # ------------------------------------------------------------ submission

    def submit(self, operator_id: str, exec_: ExecutionTuple, client_id: str = "client") -> Submission:
        op = self.actors.get(operator_id)
        if op is None or op.role is not ActorRole.OPERATOR or op.stake <= 0:
            raise RejectedSubmission(f"{operator_id!r} is not a staked operator")
        problems = self.registry.environment_problems(
            exec_.model_id, exec_.container_digest, exec_.arch, exec_.driver_tag
        )
        if problems:
            self.log.emit("reject", self.now, operator=operator_id, problems=problems)
            raise RejectedSubmission("; ".join(problems))

        sid = len(self.submissions)
        req_bytes = encode_exec(exec_)
        request_hash = hash_commit(req_bytes)
        self.ledger.observe(Role.CLIENT, client_id, Label.PLAINTEXT, "request")
        # the operator's stack runs inside its own attested enclave
        op_enclave = self.enclave(op.id, exec_.container_digest)
        self.ledger.observe(Role.ENCLAVE, op.id, Label.PLAINTEXT, "request in operator enclave")

        honest_out = self._execute(op, exec_)
        claimed = published = honest_out
        fraud = op.hardware_arch not in (None, exec_.arch)
        variant = None
        if op.behavior is Behavior.FALSIFY_OUTPUT:
            variant = hashlib.sha256(self.seed + struct.pack(">QI", self.now, sid)).digest()[0] & 1
            if variant == 0:
                claimed = published = corrupt_output(honest_out)
            else:
                published = corrupt_output(honest_out)
            fraud = True
        elif op.behavior is Behavior.SUBSTITUTE_CONTAINER:
            claimed = published = infer(dataclasses.replace(exec_, model_id=exec_.model_id + "+substitute"))
            fraud = claimed != infer(exec_)

        replay = None
        if op.behavior is Behavior.REPLAY_STALE_RECEIPT:
            replay = next((s for s in reversed(self.submissions) if s.operator == op.id and s.request_hash != request_hash), None)

        epoch = self.kms.active.epoch
        pointer = self.da.reserve()
        if replay is not None:
            cipher, receipt = replay.ciphertext, replay.receipt
            fraud = True
        else:
            quote, _ = op_enclave.quote(self.now)
            receipt = make_receipt(
                exec_, claimed, op.key, str(pointer), epoch, quote.to_bytes(),
                chain_id=self.chain_id, timestamp=self.now,
            )
            rng_seed = hashlib.sha256(b"payload" + self.seed + struct.pack(">Q", sid)).digest()
            cipher = encrypt_payload(self.kms.public_key(epoch), req_bytes, published.canonical_bytes, rng_seed, epoch)
        self.ledger.observe(Role.OPERATOR, op.id, Label.CIPHERTEXT, "sealed payload")
        self.ledger.observe(Role.OPERATOR, op.id, Label.COMMITMENT, "receipt")

        if op.behavior is Behavior.WITHHOLD_DA:
            self.da.withheld_publishers.add(op.id)
        got = self.da.publish(pack_record(cipher, receipt), publisher=op.id)
        assert got == pointer
        self.ledger.observe(Role.DA, "da", Label.CIPHERTEXT, "published record")

        sub = Submission(sid, op.id, client_id, request_hash, cipher, receipt, pointer, self.now, exec=exec_, fraud=fraud)
        self.submissions.append(sub)
        self._pending.append(sub)
        self.log.emit(
            "submit", self.now, submission=sid, operator=op.id, client=client_id,
            req_hash=receipt.req_hash, out_hash=receipt.out_hash, receipt_sig=receipt.sig,
        )
        self.log.emit("publish", self.now, submission=sid, pointer=str(pointer), blob_hash=hash_commit(pack_record(cipher, receipt)))
        if self.params.delta == 0:
            sub._transition(Status.FINALIZED, self.now)
            sub.final_output_hash = receipt.out_hash
            self.log.emit("finalize", self.now, submission=sid, operator=op.id, out_hash=receipt.out_hash)
        return sub

    def _execute(self, op: Actor, exec_: ExecutionTuple) -> InferenceOutput:
        run = exec_ if op.hardware_arch in (None, exec_.arch) else dataclasses.replace(exec_, arch=op.hardware_arch)
        if op.batch_size:
            # serve alongside unrelated traffic; batch composition must not matter
            filler = [dataclasses.replace(run, seed=(run.seed + i + 1) % 2**64) for i in range(op.batch_size - 1)]
            return infer_batch([run, *filler], batch_size=op.batch_size)[0]
        return infer(run)

    # ------------------------------------------------------------ verification

    def _fetch(self, sub: Submission) -> tuple[bytes, Receipt]:
        blob, proof = self.da.fetch_with_proof(sub.da_pointer)
        if not verify_inclusion(proof, self.da.root_of(proof.slot_id)):
            raise DaError("inclusion proof failed")
        return unpack_record(blob)

    def reexecute_vote(self, verifier: Actor, sub: Submission) -> VoteRecord:
        """One committee member's full check, ending in a byte-equality vote."""
        v = verifier
        if v.behavior is Behavior.OFFLINE:
            return VoteRecord(v.id, v.stake, None, "offline")
        if v.behavior is Behavior.COLLUDING:
            return VoteRecord(v.id, v.stake, True, "colluding")
        try:
            cipher, receipt = self._fetch(sub)
        except DataUnavailable:
            return VoteRecord(v.id, v.stake, None, "unavailable")
        except (DaError, CodecError, ValueError) as exc:
            return VoteRecord(v.id, v.stake, False, f"fetch: {exc}")
        op = self.actors[sub.operator]
        if receipt_problems(receipt, op.public_bytes, self.registry):
            return VoteRecord(v.id, v.stake, False, "receipt signature or environment invalid")
        enclave = self.enclave(v.id, receipt.container_digest)
        try:
            with open_session(self.kms, enclave, self.now, receipt.key_epoch) as ctx:
                req_bytes, out_bytes = decrypt_payload(ctx, cipher)
        except ShareDenied as exc:
            return VoteRecord(v.id, v.stake, None, f"key denied: {exc.reason}")
        except (DecryptionError, KeyUnavailable):
            return VoteRecord(v.id, v.stake, False, "payload fails authentication")
        h_req = hash_commit(req_bytes)
        if not h_req == receipt.req_hash == sub.request_hash:
            return VoteRecord(v.id, v.stake, False, "request binding mismatch")
        try:
            exec_ = decode_exec(req_bytes)
            redo = infer(exec_)
        except (CodecError, ValueError) as exc:
            return VoteRecord(v.id, v.stake, False, f"re-execution failed: {exc}")
        h_out = hash_commit(redo.canonical_bytes)
        ok = redo.canonical_bytes == out_bytes and h_out == receipt.out_hash
        return VoteRecord(v.id, v.stake, ok, "match" if ok else "output mismatch", h_out)

    def light_audit(self, sub: Submission, auditors: Sequence[Actor]) -> AuditReport:
        results = []
        for a in auditors:
            vote = self.reexecute_vote(a, sub)
            if vote.reason == "unavailable":
                res = "unavailable"
            elif vote.vote is None:
                res = "denied"
            else:
                res = "match" if vote.vote else "mismatch"
            results.append((a.id, res))
        report = AuditReport(sub.id, tuple(results))
        self.log.emit("audit", self.now, submission=sub.id, results=[list(r) for r in results])
        return report

    def pick_auditors(self, sub: Submission, size: Optional[int] = None) -> list[Actor]:
        size = min(size or self.params.light_audit_size, len(self.verifiers()))
        seed = sub.receipt.req_hash + struct.pack(">QB", self.now, 1)
        return sample_committee(self.verifiers(), size, seed)

    def full_challenge(self, sub: Submission, challenger_id: str, seed: Optional[bytes] = None) -> ChallengeVerdict:
        if sub.status is not Status.PENDING:
            raise ChallengeRejected(f"submission {sub.id} is {sub.status.value}")
        if self.now > sub.published_at + self.params.delta:
            raise ChallengeRejected(f"challenge window for submission {sub.id} closed")
        if challenger_id not in self.actors:
            raise ChallengeRejected(f"unknown challenger {challenger_id!r}")
        sub.challenged = True
        seed = seed if seed is not None else sub.receipt.req_hash + struct.pack(">Q", self.now)
        committee = sample_committee(self.verifiers(), self.params.committee_size, seed)
        self.log.emit("challenge", self.now, submission=sub.id, challenger=challenger_id,
                      committee=[m.id for m in committee])
        votes = [self.reexecute_vote(m, sub) for m in committee]
        for vr in votes:
            self.log.emit("vote", self.now, submission=sub.id, verifier=vr.verifier,
                          vote=None if vr.vote is None else int(vr.vote), reason=vr.reason, output_hash=vr.output_hash)

        tally, upheld = tally_upholds([vr.vote for vr in votes], self.params.tau)
        hashes = Counter(vr.output_hash for vr in votes if vr.output_hash is not None and vr.reason != "colluding")
        majority = min(hashes.items(), key=lambda kv: (-kv[1], kv[0]))[0] if hashes else None
        try:
            self._fetch(sub)
            available = True
        except DataUnavailable:
            available = False
        except (DaError, CodecError, ValueError):
            available = True  # present but malformed: adjudicated by the votes

        if not available:
            upheld, reason = False, "unavailable"
        elif upheld:
            reason = "upheld"
        elif majority is not None and majority != sub.receipt.out_hash:
            reason = "output_mismatch"
        elif any(vr.reason == "request binding mismatch" for vr in votes):
            reason = "request_mismatch"
        elif any(vr.reason == "output mismatch" for vr in votes):
            reason = "payload_mismatch"
        else:
            reason = "insufficient_votes"

        slash_result = None
        committee_stakes = tuple((m.id, m.stake) for m in committee)
        if upheld:
            sub._transition(Status.FINALIZED, self.now)
            sub.final_output_hash = sub.receipt.out_hash
            self.log.emit("finalize", self.now, submission=sub.id, operator=sub.operator, out_hash=sub.receipt.out_hash)
            if sub.fraud:
                # an oracle outside the protocol knows this output was false
                self.log.emit("fork_choice_backstop", self.now, submission=sub.id, operator=sub.operator)
        else:
            slash_result = self.slash(sub.operator, challenger_id, committee_stakes)
            sub._transition(Status.SLASHED, self.now)
            sub.final_output_hash = majority
        verdict = ChallengeVerdict(
            sub.id, committee_stakes, tuple(votes), tally,
            Outcome.UPHELD if upheld else Outcome.SLASHED, majority, reason, slash_result,
        )
        self.verdicts.append(verdict)
        self.log.emit("verdict", self.now, submission=sub.id, tally=tally, outcome=verdict.outcome, reason=reason)
        return verdict

    def slash(self, operator_id: str, challenger_id: str, committee: Sequence[tuple[str, int]]) -> SlashResult:
        op = self.actors[operator_id]
        res = compute_slash(op.stake, self.params, committee, challenger_id)
        op.stake -= res.amount
        self.actors[challenger_id].stake += res.challenger_reward
        for vid, amt in res.committee_rewards.items():
            self.actors[vid].stake += amt
        self.burned += res.burned
        assert res.challenger_reward + sum(res.committee_rewards.values()) + res.burned == res.amount
        self.log.emit("slash", self.now, operator=operator_id, amount=res.amount, capped=res.capped,
                      challenger=challenger_id, challenger_reward=res.challenger_reward,
                      committee_rewards=res.committee_rewards, burned=res.burned)
        return res

    # ------------------------------------------------------------ key gating probes

    def rogue_share_request(self, requester: str, mode: str, captured=None) -> Optional[str]:
        """An unentitled party tries to pull key shares; returns the denial reason.

        ``mode`` is ``"no_quote"``, ``"stale_quote"`` (replays ``captured``),
        or ``"wrong_image"`` (an enclave running an unapproved container).
        Returns None if shares were released, which would be a gating failure.
        """
        if mode == "wrong_image":
            enc = Enclave(requester, hashlib.sha256(b"unapproved" + requester.encode()).digest(), self.root)
            presented = None
        else:
            enc = self.enclave(requester, sorted(self.registry.containers)[0])
            presented = (None, b"") if mode == "no_quote" else captured
        before = self.kms.total_released
        try:
            ctx = open_session(self.kms, enc, self.now, presented=presented)
        except ShareDenied as exc:
            leaked = self.kms.total_released - before
            self.log.emit("share_denied", self.now, requester=requester, mode=mode, reason=exc.reason, leaked=leaked)
            return exc.reason if leaked == 0 else None
        ctx.zeroize()
        self.log.emit("share_released", self.now, requester=requester, mode=mode)
        return None

    def operator_pubkeys(self) -> dict[str, bytes]:
        return {a.id: a.public_bytes for a in self.actors.values() if a.role is ActorRole.OPERATOR}


def stake_snapshot(actors: Iterable[Actor]) -> dict[str, int]:
    return {a.id: a.stake for a in actors}
