"""Deterministic token selection.

Tie-breaking and truncation follow one total order: probability descending,
then token index ascending. The cumulative rule is 0-indexed and inclusive:
the chosen token is the smallest index k with p_0 + ... + p_k >= r, skipping
tokens whose (truncated) probability is zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fp import as_f32, tree_sum
from .prng import PrngState


class DecodeKind(str, enum.Enum):
    GREEDY = "greedy"
    TOP_K = "top_k"
    NUCLEUS = "nucleus"


class DecodeError(ValueError):
    pass


@dataclass(frozen=True)
class DecodePolicy:
    kind: DecodeKind
    max_tokens: int
    k: Optional[int] = None
    p: Optional[float] = None

    def __post_init__(self) -> None:
        kind = DecodeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not isinstance(self.max_tokens, int) or self.max_tokens < 0:
            raise DecodeError(f"max_tokens must be a non-negative integer, got {self.max_tokens!r}")
        if kind is DecodeKind.TOP_K:
            if not isinstance(self.k, int) or self.k < 1:
                raise DecodeError("top_k requires a positive integer k")
            if self.p is not None:
                raise DecodeError("top_k takes no p")
        elif kind is DecodeKind.NUCLEUS:
            if self.p is None or not 0.0 < float(self.p) <= 1.0:
                raise DecodeError("nucleus requires p in (0, 1]")
            if self.k is not None:
                raise DecodeError("nucleus takes no k")
            object.__setattr__(self, "p", float(self.p))
        else:
            if self.k is not None or self.p is not None:
                raise DecodeError("greedy takes neither k nor p")

    @classmethod
    def greedy(cls, max_tokens: int) -> DecodePolicy:
        return cls(DecodeKind.GREEDY, max_tokens)

    @classmethod
    def top_k(cls, k: int, max_tokens: int) -> DecodePolicy:
        return cls(DecodeKind.TOP_K, max_tokens, k=k)

    @classmethod
    def nucleus(cls, p: float, max_tokens: int) -> DecodePolicy:
        return cls(DecodeKind.NUCLEUS, max_tokens, p=p)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "max_tokens": self.max_tokens}
        if self.k is not None:
            d["k"] = self.k
        if self.p is not None:
            d["p"] = self.p
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DecodePolicy:
        return cls(DecodeKind(d["kind"]), int(d["max_tokens"]), k=d.get("k"), p=d.get("p"))


def _rank_order(p: np.ndarray) -> np.ndarray:
    # lexsort keys: last is primary -> (-p, index)
    idx = np.arange(p.size)
    return np.lexsort((idx, -p.astype(np.float64)))


def truncate(probs: np.ndarray, policy: DecodePolicy) -> np.ndarray:
    """Policy-specific truncation + renormalisation, kept in index order."""
    p = as_f32(probs).ravel()
    if policy.kind is DecodeKind.GREEDY:
        return p
    order = _rank_order(p)
    keep = np.zeros(p.size, dtype=bool)
    if policy.kind is DecodeKind.TOP_K:
        keep[order[: policy.k]] = True
    else:
        cum = 0.0
        for i in order:
            keep[i] = True
            cum += float(p[i])
            if cum >= policy.p:
                break
    kept = np.where(keep, p, np.float32(0.0))
    total = tree_sum(kept)
    if not total > 0:
        raise DecodeError("no probability mass left after truncation")
    return kept / total


def select_token(probs, policy: DecodePolicy, r: float) -> int:
    """Pick a token given an already-drawn uniform ``r`` in [0, 1)."""
    p = as_f32(probs).ravel()
    if p.size == 0:
        raise DecodeError("empty probability vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DecodeError("probabilities must be finite and non-negative")
    if policy.kind is DecodeKind.GREEDY:
        if not np.any(p > 0):
            raise DecodeError("all-zero probability mass")
        return int(np.argmax(p))  # first maximal index
    q = truncate(p, policy)
    cum = 0.0
    last = -1
    for i in range(q.size):
        qi = float(q[i])
        if qi <= 0.0:
            continue
        cum += qi
        last = i
        if cum >= r:
            return i
    # rounding left the total a hair under r
    return last


def decode_step(probs, policy: DecodePolicy, prng: PrngState) -> tuple[int, PrngState]:
    """One decoding step; the generator advances exactly once, greedy included."""
    r, nxt = prng.next_unit()
    return select_token(probs, policy, r), nxt
