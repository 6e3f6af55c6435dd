"""Deterministic multi-epoch scenario runner.

A scenario is a population of operators, verifiers and clients plus protocol
and economic parameters. ``run_scenario`` drives the protocol on a virtual
epoch clock and returns metrics together with an NDJSON event log; every
random choice is derived from the single config seed, so the same config
always yields the same log bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import random
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Optional, Union

from .da import DaBatch, verify_inclusion
from .detcore import VOCAB_SIZE, DecodePolicy, ExecutionTuple
from .econ import EconParams
from .privacy import TaintLedger
from .protocol import (
    Actor,
    ActorRole,
    Behavior,
    ChallengeRejected,
    Protocol,
    ProtocolParams,
    RejectedSubmission,
    Status,
    Submission,
)
from .receipts import Registry, hash_commit, unpack_record, verify_signature

OPERATOR_TAGS = ("honest", "falsify_output", "substitute_container", "replay_stale_receipt", "withhold_da")
VERIFIER_TAGS = ("honest", "colluding_verifiers")
PROBE_TAGS = ("stale_quote_kms", "non_attested_share_request")
ADVERSARY_TAGS = frozenset(OPERATOR_TAGS[1:] + VERIFIER_TAGS[1:] + PROBE_TAGS)

MODEL_ID = "toy-1"
CONTAINER = hashlib.sha256(b"verinfer-container:toy-1").digest()
ARCH = "archA"
DRIVER = "drv-535"


class ConfigError(ValueError):
    """Invalid scenario config; ``problems`` maps field paths to messages."""

    def __init__(self, problems: dict[str, str]) -> None:
        self.problems = problems
        super().__init__("; ".join(f"{k}: {v}" for k, v in problems.items()))


@dataclass(frozen=True)
class OperatorGroup:
    count: int = 1
    stake: int = 1000
    behavior: str = "honest"
    hardware_arch: Optional[str] = None  # runs on this arch whatever the request says
    batch_size: Optional[int] = None  # serves each request inside a batch of this size
    driver_tag: Optional[str] = None  # stamps this driver instead of the pinned one


@dataclass(frozen=True)
class VerifierGroup:
    count: int = 5
    stake: int = 100
    behavior: str = "honest"


@dataclass(frozen=True)
class Workload:
    requests_per_epoch: int = 4
    policies: tuple[str, ...] = ("greedy", "top_k:8", "nucleus:0.9")
    max_tokens: int = 4
    prompt_len: tuple[int, int] = (2, 8)
    clients: int = 2


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    epochs: int = 3
    operators: tuple[OperatorGroup, ...] = (OperatorGroup(),)
    verifiers: tuple[VerifierGroup, ...] = (VerifierGroup(),)
    clients: Workload = Workload()
    params: ProtocolParams = ProtocolParams()
    econ: EconParams = EconParams(0.1, 50, 100)
    light_audit_rate: float = 0.1
    adversaries: tuple[str, ...] = ()
    stress: bool = False  # allows a colluding committee supermajority

    # -------------------------------------------------------------- io

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "epochs": self.epochs,
            "operators": [_compact(dataclasses.asdict(g)) for g in self.operators],
            "verifiers": [dataclasses.asdict(g) for g in self.verifiers],
            "clients": {**dataclasses.asdict(self.clients), "policies": list(self.clients.policies),
                        "prompt_len": list(self.clients.prompt_len)},
            "params": self.params.to_dict(),
            "econ": {k: v for k, v in dataclasses.asdict(self.econ).items() if k in ("pi_c", "G", "S_slash")},
            "light_audit_rate": self.light_audit_rate,
            "adversaries": list(self.adversaries),
            "stress": self.stress,
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioConfig:
        problems: dict[str, str] = {}
        known = {f.name for f in dataclasses.fields(cls)}
        for k in d:
            if k not in known:
                problems[k] = "unknown field"

        def build(path: str, factory, raw):
            try:
                return factory(raw)
            except ConfigError as exc:
                problems.update({f"{path}.{k}": v for k, v in exc.problems.items()})
            except (TypeError, ValueError, KeyError) as exc:
                problems[path] = str(exc)
            return None

        kw: dict[str, Any] = {}
        for name in ("seed", "epochs"):
            if name in d:
                if not isinstance(d[name], int) or isinstance(d[name], bool):
                    problems[name] = "must be an integer"
                else:
                    kw[name] = d[name]
        if "operators" in d:
            kw["operators"] = tuple(build(f"operators[{i}]", lambda g: OperatorGroup(**g), g)
                                    for i, g in enumerate(d["operators"]))
        if "verifiers" in d:
            kw["verifiers"] = tuple(build(f"verifiers[{i}]", lambda g: VerifierGroup(**g), g)
                                    for i, g in enumerate(d["verifiers"]))
        if "clients" in d:
            kw["clients"] = build("clients", _workload, d["clients"])
        if "params" in d:
            kw["params"] = build("params", ProtocolParams.from_dict, d["params"])
        if "econ" in d:
            kw["econ"] = build("econ", lambda e: EconParams(**e), d["econ"])
        if "light_audit_rate" in d:
            kw["light_audit_rate"] = d["light_audit_rate"]
        if "adversaries" in d:
            kw["adversaries"] = tuple(d["adversaries"])
        if "stress" in d:
            kw["stress"] = bool(d["stress"])
        for k in ("operators", "verifiers"):
            if k in kw:
                kw[k] = tuple(g for g in kw[k] if g is not None)
        # report parse failures together with semantic ones
        cfg = cls(**{k: v for k, v in kw.items() if v is not None})
        problems.update({k: v for k, v in cfg.problems().items() if k not in problems})
        if problems:
            raise ConfigError(problems)
        return cfg

    @classmethod
    def from_json(cls, text: str) -> ScenarioConfig:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError({"<file>": f"not JSON: {exc}"}) from None
        if not isinstance(data, dict):
            raise ConfigError({"<file>": "top level must be an object"})
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> ScenarioConfig:
        return cls.from_json(Path(path).read_text())

    # -------------------------------------------------------------- checks

    def problems(self) -> dict[str, str]:
        out: dict[str, str] = {}
        if self.epochs < 1:
            out["epochs"] = "must be >= 1"
        if not 0 <= self.seed < 2**64:
            out["seed"] = "must be an unsigned 64-bit integer"
        if not self.operators or sum(g.count for g in self.operators) < 1:
            out["operators"] = "need at least one operator"
        used = set()
        for i, g in enumerate(self.operators):
            if g.behavior not in OPERATOR_TAGS:
                out[f"operators[{i}].behavior"] = f"must be one of {list(OPERATOR_TAGS)}"
            if g.count < 0 or g.stake <= 0:
                out[f"operators[{i}]"] = "count must be >= 0 and stake > 0"
            if g.batch_size is not None and g.batch_size < 1:
                out[f"operators[{i}].batch_size"] = "must be >= 1"
            if g.count and g.behavior in OPERATOR_TAGS[1:]:
                used.add(g.behavior)
        n_ver = sum(g.count for g in self.verifiers)
        if n_ver < self.params.committee_size:
            out["verifiers"] = f"need at least committee_size={self.params.committee_size} verifiers"
        for i, g in enumerate(self.verifiers):
            if g.behavior not in VERIFIER_TAGS:
                out[f"verifiers[{i}].behavior"] = f"must be one of {list(VERIFIER_TAGS)}"
            if g.count < 0 or g.stake <= 0:
                out[f"verifiers[{i}]"] = "count must be >= 0 and stake > 0"
            if g.count and g.behavior in VERIFIER_TAGS[1:]:
                used.add(g.behavior)
        for tag in self.adversaries:
            if tag not in ADVERSARY_TAGS:
                out["adversaries"] = f"{tag!r} not in {sorted(ADVERSARY_TAGS)}"
        missing = used - set(self.adversaries)
        if missing:
            out["adversaries"] = f"behaviors {sorted(missing)} used but not declared"
        if not self.stress and n_ver:
            colluding = sum(g.count * g.stake for g in self.verifiers if g.behavior == "colluding_verifiers")
            total = sum(g.count * g.stake for g in self.verifiers)
            if total and Fraction(colluding, total) >= self.params.tau:
                out["verifiers"] = "colluding stake fraction reaches tau; mark the scenario stress"
        if not 0 <= self.light_audit_rate <= 1:
            out["light_audit_rate"] = "must lie in [0, 1]"
        w = self.clients
        if w.requests_per_epoch < 0 or w.clients < 1 or w.max_tokens < 0:
            out["clients"] = "requests_per_epoch >= 0, clients >= 1, max_tokens >= 0"
        lo, hi = w.prompt_len
        if not 1 <= lo <= hi:
            out["clients.prompt_len"] = "need 1 <= min <= max"
        for p in w.policies:
            try:
                _policy(p, 1)
            except ValueError as exc:
                out["clients.policies"] = str(exc)
        if not w.policies:
            out["clients.policies"] = "at least one policy"
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigError(problems)


def _compact(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def _workload(d: dict) -> Workload:
    d = dict(d)
    if "policies" in d:
        d["policies"] = tuple(d["policies"])
    if "prompt_len" in d:
        d["prompt_len"] = tuple(d["prompt_len"])
    return Workload(**d)


def _policy(spec: str, max_tokens: int) -> DecodePolicy:
    """``greedy``, ``top_k:<k>`` or ``nucleus:<p>``."""
    name, _, arg = spec.partition(":")
    if name == "greedy" and not arg:
        return DecodePolicy.greedy(max_tokens)
    if name == "top_k" and arg:
        return DecodePolicy.top_k(int(arg), max_tokens)
    if name == "nucleus" and arg:
        return DecodePolicy.nucleus(float(arg), max_tokens)
    raise ValueError(f"bad decode policy {spec!r}")


# ---------------------------------------------------------------- metrics


@dataclass
class RunMetrics:
    submissions: int = 0
    rejected_submissions: int = 0
    challenges: int = 0
    light_audits: int = 0
    audit_mismatches: int = 0
    frauds_injected: int = 0
    frauds_challenged: int = 0
    frauds_challenged_honest_majority: int = 0
    frauds_detected: int = 0
    frauds_finalized: int = 0
    false_slashes: int = 0
    availability_failures: int = 0
    request_mismatches: int = 0
    backstop_events: int = 0
    share_requests_denied: int = 0
    shares_leaked: int = 0
    plaintext_exposures: int = 0
    finalized: int = 0
    slashed: int = 0
    burned: int = 0
    final_stakes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def csv_rows(self) -> list[tuple[str, Any]]:
        rows = [(k, v) for k, v in self.to_dict().items() if k != "final_stakes"]
        rows += [(f"stake:{a}", s) for a, s in sorted(self.final_stakes.items())]
        return rows


@dataclass
class ScenarioRun:
    metrics: RunMetrics
    log: str
    protocol: Protocol
    archive: dict[int, DaBatch]  # every sealed batch, kept past pruning


# ---------------------------------------------------------------- runner


def _rng(seed: int, label: str) -> random.Random:
    return random.Random(hashlib.sha256(b"verinfer-scenario" + struct.pack(">Q", seed) + label.encode()).digest())


def _registry() -> Registry:
    return Registry(models=frozenset({MODEL_ID}), containers=frozenset({CONTAINER}), drivers=frozenset({DRIVER}))


def _population(cfg: ScenarioConfig, proto: Protocol) -> tuple[list[Actor], list[Actor]]:
    ops = []
    for gi, g in enumerate(cfg.operators):
        for j in range(g.count):
            ops.append(proto.register(Actor(
                f"op{gi}.{j}", ActorRole.OPERATOR, g.stake, Behavior(g.behavior),
                hardware_arch=g.hardware_arch, batch_size=g.batch_size,
            )))
    vers = []
    for gi, g in enumerate(cfg.verifiers):
        for j in range(g.count):
            vers.append(proto.register(Actor(f"ver{gi}.{j}", ActorRole.VERIFIER, g.stake, Behavior(g.behavior))))
    proto.register(Actor("watcher", ActorRole.WATCHER, 0))
    return ops, vers


def _request(cfg: ScenarioConfig, rng: random.Random, driver: str) -> ExecutionTuple:
    w = cfg.clients
    n = rng.randint(*w.prompt_len)
    return ExecutionTuple(
        MODEL_ID, CONTAINER, ARCH, driver,
        _policy(rng.choice(w.policies), w.max_tokens),
        rng.getrandbits(64), tuple(rng.randrange(VOCAB_SIZE) for _ in range(n)),
    )


def run_scenario(cfg: ScenarioConfig) -> ScenarioRun:
    cfg.validate()
    ledger = TaintLedger(strict=False)
    proto = Protocol(cfg.params, _registry(), seed=b"scenario" + struct.pack(">Q", cfg.seed), ledger=ledger)
    ops, _ = _population(cfg, proto)
    drivers = {a.id: g.driver_tag or DRIVER for g, a in _op_groups(cfg, ops)}
    m = RunMetrics()
    archive: dict[int, DaBatch] = {}
    withheld_ops = {a.id for a in ops if a.behavior is Behavior.WITHHOLD_DA}
    proto.log.emit("scenario", 0, config_hash=hash_commit(cfg.to_json().encode()), seed=cfg.seed, epochs=cfg.epochs)

    def step() -> None:
        slot = proto.da.open_slot
        proto.advance()
        archive[slot] = proto.da.batches[slot]

    def settle(sub: Submission, verdict) -> None:
        if verdict.reason == "unavailable":
            m.availability_failures += 1
        if verdict.reason == "request_mismatch":
            m.request_mismatches += 1

    probe_quotes: dict[int, Any] = {}
    open_subs: list[Submission] = []
    for epoch in range(cfg.epochs):
        req_rng = _rng(cfg.seed, f"requests:{epoch}")
        for i in range(cfg.clients.requests_per_epoch):
            op = ops[req_rng.randrange(len(ops))]
            exec_ = _request(cfg, req_rng, drivers[op.id])
            client = f"client{req_rng.randrange(cfg.clients.clients)}"
            try:
                sub = proto.submit(op.id, exec_, client)
            except RejectedSubmission:
                m.rejected_submissions += 1
                continue
            m.submissions += 1
            m.frauds_injected += sub.fraud
            open_subs.append(sub)

        _probes(cfg, proto, epoch, probe_quotes, m)
        step()

        # watchers look at what was just sealed
        watch_rng = _rng(cfg.seed, f"watch:{epoch}")
        for sub in [s for s in open_subs if s.published_at == epoch]:
            audit_coin, challenge_coin = watch_rng.random(), watch_rng.random()
            suspicious = False
            if audit_coin < cfg.light_audit_rate:
                report = proto.light_audit(sub, proto.pick_auditors(sub))
                m.light_audits += 1
                suspicious = report.mismatch or any(r == "unavailable" for _, r in report.results)
                m.audit_mismatches += suspicious
            if sub.status is not Status.PENDING or not (suspicious or challenge_coin < cfg.econ.pi_c):
                continue
            try:
                verdict = proto.full_challenge(sub, "watcher")
            except ChallengeRejected:
                continue
            m.challenges += 1
            if sub.fraud:
                m.frauds_challenged += 1
                colluders = sum(1 for v in verdict.votes if v.reason == "colluding")
                if Fraction(colluders, len(verdict.votes)) < cfg.params.tau:
                    m.frauds_challenged_honest_majority += 1
            settle(sub, verdict)

    for _ in range(cfg.params.delta + 1):
        step()

    for sub in proto.submissions:
        assert sub.status is not Status.PENDING
        if sub.status is Status.SLASHED:
            m.slashed += 1
            if sub.fraud:
                m.frauds_detected += 1
            elif sub.operator not in withheld_ops:
                m.false_slashes += 1
        else:
            m.finalized += 1
            m.frauds_finalized += sub.fraud
    m.backstop_events = len(proto.log.events("fork_choice_backstop"))
    m.plaintext_exposures = len(ledger.exposures())
    m.burned = proto.burned
    m.final_stakes = {a.id: a.stake for a in proto.actors.values()}
    proto.log.emit("metrics", proto.now, **{k: v for k, v in m.to_dict().items()})
    return ScenarioRun(m, proto.log.text(), proto, archive)


def _op_groups(cfg: ScenarioConfig, ops: list[Actor]):
    it = iter(ops)
    for g in cfg.operators:
        for _ in range(g.count):
            yield g, next(it)


def _probes(cfg: ScenarioConfig, proto: Protocol, epoch: int, quotes: dict, m: RunMetrics) -> None:
    """Key-gating adversaries: one attempt each per epoch."""
    attempts = []
    if "non_attested_share_request" in cfg.adversaries:
        attempts.append(("anon", "no_quote", None))
        attempts.append(("imposter", "wrong_image", None))
    if "stale_quote_kms" in cfg.adversaries:
        # the adversary's enclave quoted once; it keeps trying that quote later
        quotes[epoch] = proto.enclave("stale", CONTAINER).quote(proto.now)
        window = proto.kms.freshness_window
        old = quotes.get(epoch - window - 1)
        if old is not None:
            attempts.append(("stale", "stale_quote", old))
    for who, mode, captured in attempts:
        before = proto.kms.total_released
        reason = proto.rogue_share_request(who, mode, captured)
        m.shares_leaked += proto.kms.total_released - before
        if reason is not None:
            m.share_requests_denied += 1


# ---------------------------------------------------------------- replay


@dataclass(frozen=True)
class ReplayResult:
    ok: bool
    line: Optional[int] = None  # 1-based line of the first divergence
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def replay_verify(event_log: str, cfg: ScenarioConfig) -> ReplayResult:
    """Re-run ``cfg`` and compare with ``event_log`` byte for byte.

    When the logs agree, every published record named in the log is also
    re-checked: its bytes hash to the logged blob hash, its inclusion proof
    reproduces the logged batch root and the receipt signature verifies under
    the operator key.
    """
    run = run_scenario(cfg)
    got, want = event_log.splitlines(keepends=True), run.log.splitlines(keepends=True)
    for i, (a, b) in enumerate(zip(got, want), start=1):
        if a != b:
            return ReplayResult(False, i, "log line differs from re-execution")
    if len(got) != len(want):
        return ReplayResult(False, min(len(got), len(want)) + 1, "log length differs from re-execution")

    events = [json.loads(line) for line in got]
    roots = {e["slot"]: bytes.fromhex(e["root"]) for e in events if e["event"] == "seal"}
    keys = run.protocol.operator_pubkeys()
    signed = {e["submission"]: e for e in events if e["event"] == "submit"}
    for lineno, e in enumerate(events, start=1):
        if e["event"] != "publish":
            continue
        slot, idx = (int(x) for x in e["pointer"].split(":")[1:])
        batch = run.archive.get(slot)
        if batch is None or slot not in roots:
            return ReplayResult(False, lineno, f"slot {slot} never sealed")
        proof = batch.proof(idx)
        if not verify_inclusion(proof, roots[slot]) or hash_commit(proof.leaf).hex() != e["blob_hash"]:
            return ReplayResult(False, lineno, "inclusion proof or blob hash mismatch")
        _, receipt = unpack_record(proof.leaf)
        sub = signed[e["submission"]]
        op_key = keys[sub["operator"]]
        # a replayed receipt carries its original signer, which is still this operator
        if receipt.sig.hex() != sub["receipt_sig"] or not verify_signature(op_key, receipt.body_bytes(), receipt.sig):
            return ReplayResult(False, lineno, "receipt signature does not verify")
    return ReplayResult(True)


# ---------------------------------------------------------------- threat matrix


@dataclass(frozen=True)
class ThreatCase:
    threat: str
    mechanism: str
    config: ScenarioConfig
    mitigated: Callable[[RunMetrics], bool]


def threat_matrix(seed: int = 0, epochs: int = 4) -> list[ThreatCase]:
    """One scenario per threat class, each alone against honest peers.

    Every watcher challenge fires (pi_c = 1) so detection is exercised on
    every submission rather than sampled.
    """
    always = EconParams(1, 50, 100)

    def cfg(ops=(OperatorGroup(),), vers=(VerifierGroup(),), adv=(), stress=False, econ=always):
        return ScenarioConfig(seed=seed, epochs=epochs, operators=ops, verifiers=vers, econ=econ,
                              adversaries=adv, stress=stress)

    def caught_all(m: RunMetrics) -> bool:
        return m.frauds_injected > 0 and m.frauds_detected == m.frauds_injected and m.false_slashes == 0

    return [
        ThreatCase("model/kernel tampering", "re-execution under the registered container exposes the substitute",
                   cfg((OperatorGroup(behavior="substitute_container"),), adv=("substitute_container",)), caught_all),
        ThreatCase("cross-architecture drift", "verifiers re-run on the receipt's gpu_arch and outvote the drifted bytes",
                   cfg((OperatorGroup(hardware_arch="archB"),)), caught_all),
        ThreatCase("library/driver drift", "unpinned driver tag rejected by the registry before publication",
                   cfg((OperatorGroup(driver_tag="drv-999"),)),
                   lambda m: m.submissions == 0 and m.rejected_submissions > 0),
        ThreatCase("batch nondeterminism", "batch-invariant kernels: batched serving matches solo re-execution",
                   cfg((OperatorGroup(batch_size=4), OperatorGroup(batch_size=8))),
                   lambda m: m.challenges == m.submissions > 0 and m.slashed == 0),
        ThreatCase("KMS compromise", "stale quotes refused by every shard; no share leaves a shard",
                   cfg(adv=("stale_quote_kms",)),
                   lambda m: m.share_requests_denied > 0 and m.shares_leaked == 0),
        ThreatCase("TEE compromise", "missing quote or unapproved measurement refused before share release",
                   cfg(adv=("non_attested_share_request",)),
                   lambda m: m.share_requests_denied > 0 and m.shares_leaked == 0),
        ThreatCase("verifier collusion", "colluding minority is outvoted; every challenged fraud slashed",
                   cfg((OperatorGroup(behavior="falsify_output"),),
                       (VerifierGroup(count=4), VerifierGroup(count=1, behavior="colluding_verifiers")),
                       adv=("falsify_output", "colluding_verifiers")),
                   lambda m: caught_all(m) and m.frauds_detected == m.frauds_challenged_honest_majority),
        ThreatCase("data withholding", "unavailable record adjudicated against the operator",
                   cfg((OperatorGroup(behavior="withhold_da"),), adv=("withhold_da",)),
                   lambda m: m.availability_failures == m.submissions > 0 and m.slashed == m.submissions),
        ThreatCase("receipt replay", "republished receipt fails request binding (req_hash mismatch)",
                   cfg((OperatorGroup(behavior="replay_stale_receipt"),), adv=("replay_stale_receipt",)),
                   lambda m: caught_all(m) and m.request_mismatches == m.frauds_injected),
    ]
