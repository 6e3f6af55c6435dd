"""Deterrence economics: closed form plus a Monte Carlo driven by the protocol.

Per inference a cheating operator gains G when unchallenged and loses
S_slash when a challenge fires, so E[gain] = (1 - pi_c) G - pi_c S_slash.
That crosses zero at G / (G + S_slash); the simpler ratio G / S_slash is a
sufficient bound lying to the right of the root. Units are stake units per
inference; challenges are assumed free for the challenger.
"""

from __future__ import annotations

import csv
import hashlib
import math
import random
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence, Union

from .detcore import DecodePolicy, ExecutionTuple
from .protocol import Actor, ActorRole, Behavior, Protocol, ProtocolParams, Status
from .receipts import Registry

Number = Union[int, float, Fraction]


@dataclass(frozen=True)
class EconParams:
    pi_c: float
    G: float
    S_slash: float
    alpha: float = 0.2
    beta: float = 0.3

    def __post_init__(self) -> None:
        problems = []
        if not 0 <= self.pi_c <= 1:
            problems.append("pi_c must lie in [0, 1]")
        if self.G < 0:
            problems.append("G must be >= 0")
        if self.S_slash <= 0:
            problems.append("S_slash must be > 0")
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta > 1:
            problems.append("alpha, beta must be >= 0 with alpha + beta <= 1")
        if problems:
            raise ValueError("; ".join(problems))


def expected_gain(params: EconParams) -> float:
    pi, g, s = (Fraction(x) for x in (params.pi_c, params.G, params.S_slash))
    return float((1 - pi) * g - pi * s)


@dataclass(frozen=True)
class CriticalProbability:
    value: float
    undeterred: bool  # the bound exceeds 1, so no challenge rate satisfies it


def critical_challenge_probability(G: Number, S_slash: Number) -> CriticalProbability:
    """The G / S_slash deterrence bound.

    Any pi_c above it makes expected_gain negative, since
    (1 - pi) G - pi S < G - pi S. It is conservative: the exact root is
    ``break_even_probability``.
    """
    if S_slash <= 0:
        raise ValueError("S_slash must be positive")
    value = float(Fraction(G) / Fraction(S_slash))
    return CriticalProbability(value, value > 1)


def break_even_probability(G: Number, S_slash: Number) -> float:
    """Exact zero of expected_gain in pi_c: G / (G + S_slash)."""
    if S_slash <= 0:
        raise ValueError("S_slash must be positive")
    return float(Fraction(G) / (Fraction(G) + Fraction(S_slash)))


def compose_challenge_probability(p_audit: float, p_user: float) -> float:
    """Chance that at least one of two independent checks fires."""
    return 1 - (1 - p_audit) * (1 - p_user)


@dataclass(frozen=True)
class McResult:
    strategy: str
    mean: float
    stderr: float
    trials: int


_DIGEST = hashlib.sha256(b"econ-container").digest()


def _trial_exec(i: int) -> ExecutionTuple:
    # small on purpose: the payoff does not depend on the workload
    return ExecutionTuple("toy-econ", _DIGEST, "archA", "drv", DecodePolicy.top_k(4, 1), i, (i % 64, 7))


def monte_carlo_utility(
    strategy: str,
    params: EconParams,
    trials: int,
    seed: int = 0,
    committee_size: int = 3,
) -> McResult:
    """Empirical per-inference utility from real submissions and challenges.

    Each trial submits one request through the protocol; with probability
    pi_c (drawn from a per-trial seed) a watcher files a full challenge.
    Utility is G for an unchallenged lie that finalizes plus the operator's
    stake change, so honest play scores exactly 0.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if strategy not in ("honest", "cheat"):
        raise ValueError("strategy is 'honest' or 'cheat'")
    s_slash = int(params.S_slash)
    if s_slash != params.S_slash:
        raise ValueError("Monte Carlo needs an integer S_slash (stake units)")
    pp = ProtocolParams(delta=1, committee_size=committee_size, alpha=params.alpha, beta=params.beta, s_slash=s_slash)
    proto = Protocol(pp, Registry(containers=frozenset({_DIGEST})), seed=b"econ" + struct.pack(">Q", seed))
    behavior = Behavior.FALSIFY_OUTPUT if strategy == "cheat" else Behavior.HONEST
    op = proto.register(Actor("operator", ActorRole.OPERATOR, s_slash * (trials + 1), behavior))
    proto.register(Actor("watcher", ActorRole.WATCHER, 0))
    for j in range(committee_size + 2):
        proto.register(Actor(f"verifier-{j}", ActorRole.VERIFIER, 100))

    utilities = []
    for i in range(trials):
        coin = random.Random(hashlib.sha256(struct.pack(">QQ", seed, i)).digest()).random()
        before = op.stake
        sub = proto.submit(op.id, _trial_exec(i))
        proto.advance()  # seals the batch
        if coin < params.pi_c:
            proto.full_challenge(sub, "watcher")
        proto.advance()
        proto.advance()  # past the window
        assert sub.status is not Status.PENDING
        gain = params.G if (sub.fraud and sub.status is Status.FINALIZED) else 0.0
        utilities.append(gain + (op.stake - before))

    n = len(utilities)
    mean = math.fsum(utilities) / n
    var = math.fsum((u - mean) ** 2 for u in utilities) / (n - 1) if n > 1 else 0.0
    return McResult(strategy, mean, math.sqrt(var / n), n)


CSV_COLUMNS = ("pi_c", "G", "S_slash", "strategy", "mean_utility", "stderr")


def sweep(
    grid: Iterable[float], G: float, S_slash: float, trials: int, seed: int = 0,
    strategies: Sequence[str] = ("honest", "cheat"),
) -> list[dict]:
    rows = []
    for pi in grid:
        for strat in strategies:
            r = monte_carlo_utility(strat, EconParams(pi, G, S_slash), trials, seed)
            rows.append(dict(zip(CSV_COLUMNS, (pi, G, S_slash, strat, r.mean, r.stderr))))
    return rows


def write_csv(rows: Iterable[dict], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        w.writerows(rows)


def zero_crossing(points: Sequence[tuple[float, float]]) -> float:
    """Linear interpolation of the first sign change in (pi_c, utility) pairs."""
    pts = sorted(points)
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        if y0 == 0:
            return x0
        if (y0 > 0) != (y1 > 0):
            return x0 + (x1 - x0) * y0 / (y0 - y1)
    raise ValueError("no sign change in the given points")
