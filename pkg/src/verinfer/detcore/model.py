"""Seeded toy language model and the deterministic inference loop.

The model is a two-layer recurrent token predictor::

    h <- clip(W_hidden . (E[token] + h), -2, 2)     for every fed token
    logits <- W_out . h
    next <- decode(softmax(logits))

Weights are drawn from xoshiro256++ seeded by SHA-256(model_id), so any two
hosts holding the same ``model_id`` hold the same weights bit for bit.

``canonical_bytes`` layout (little-endian, normative)::

    u32 token_count | token_count x u32 token
    u32 step_count  | step_count x (u32 vocab_size | vocab_size x f32 logit bits)
"""

from __future__ import annotations

import functools
import hashlib
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .decode import DecodePolicy, decode_step
from .fp import ArchProfile, FmaMode, ReductionOrder, f32, matvec_unchecked, softmax_unchecked
from .prng import PrngState, uniform_f32_block

VOCAB_SIZE = 64
HIDDEN_SIZE = 32
STATE_CLIP = 2.0

PROFILES: dict[str, ArchProfile] = {
    "archA": ArchProfile("archA", ReductionOrder.CANONICAL_TREE, FmaMode.FUSED),
    "archB": ArchProfile("archB", ReductionOrder.SEQUENTIAL, FmaMode.SPLIT),
    "archC": ArchProfile("archC", ReductionOrder.CANONICAL_TREE, FmaMode.SPLIT),
}


class InferenceError(ValueError):
    pass


def get_profile(name: str) -> ArchProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise InferenceError(f"unknown arch profile {name!r}; known: {sorted(PROFILES)}") from None


@dataclass(frozen=True)
class ExecutionTuple:
    """Everything that can influence the output of one inference."""

    model_id: str
    container_digest: bytes
    arch: str
    driver_tag: str
    decode_policy: DecodePolicy
    seed: int
    prompt: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))
        if not isinstance(self.container_digest, bytes) or len(self.container_digest) != 32:
            raise InferenceError("container_digest must be 32 bytes")
        if not 0 <= self.seed < 2**64:
            raise InferenceError("seed must be an unsigned 64-bit integer")
        if any(not 0 <= t < 2**32 for t in self.prompt):
            raise InferenceError("prompt tokens must be unsigned 32-bit ids")
        if not isinstance(self.decode_policy, DecodePolicy):
            raise InferenceError("decode_policy must be a DecodePolicy")

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "container_digest": self.container_digest.hex(),
            "arch": self.arch,
            "driver_tag": self.driver_tag,
            "decode_policy": self.decode_policy.to_dict(),
            "seed": self.seed,
            "prompt": list(self.prompt),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExecutionTuple:
        return cls(
            model_id=d["model_id"],
            container_digest=bytes.fromhex(d["container_digest"]),
            arch=d["arch"],
            driver_tag=d["driver_tag"],
            decode_policy=DecodePolicy.from_dict(d["decode_policy"]),
            seed=int(d["seed"]),
            prompt=tuple(d["prompt"]),
        )


@dataclass(frozen=True)
class InferenceOutput:
    tokens: tuple[int, ...]
    logits_trace: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        trace = []
        for step in self.logits_trace:
            a = np.array(step, dtype=f32, copy=True)
            a.setflags(write=False)
            trace.append(a)
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        object.__setattr__(self, "logits_trace", tuple(trace))

    @functools.cached_property
    def canonical_bytes(self) -> bytes:
        parts = [struct.pack("<I", len(self.tokens))]
        parts.append(np.asarray(self.tokens, dtype="<u4").tobytes())
        parts.append(struct.pack("<I", len(self.logits_trace)))
        for step in self.logits_trace:
            parts.append(struct.pack("<I", step.size))
            parts.append(step.astype("<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_canonical_bytes(cls, data: bytes) -> InferenceOutput:
        pos = 0

        def take(n: int) -> bytes:
            nonlocal pos
            if pos + n > len(data):
                raise ValueError("truncated canonical output bytes")
            chunk = data[pos : pos + n]
            pos += n
            return chunk

        (n_tok,) = struct.unpack("<I", take(4))
        tokens = tuple(np.frombuffer(take(4 * n_tok), dtype="<u4").tolist())
        (n_steps,) = struct.unpack("<I", take(4))
        trace = []
        for _ in range(n_steps):
            (v,) = struct.unpack("<I", take(4))
            trace.append(np.frombuffer(take(4 * v), dtype="<f4").astype(f32))
        if pos != len(data):
            raise ValueError("trailing bytes after canonical output")
        return cls(tokens, tuple(trace))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InferenceOutput):
            return NotImplemented
        return self.canonical_bytes == other.canonical_bytes

    def __hash__(self) -> int:
        return hash(self.canonical_bytes)


@dataclass(frozen=True)
class ToyModel:
    embed: np.ndarray  # (VOCAB_SIZE, HIDDEN_SIZE)
    w_hidden: np.ndarray  # (HIDDEN_SIZE, HIDDEN_SIZE)
    w_out: np.ndarray  # (VOCAB_SIZE, HIDDEN_SIZE)


def _weights(state: PrngState, shape: tuple[int, int], scale: float) -> tuple[np.ndarray, PrngState]:
    vals, state = uniform_f32_block(state, shape[0] * shape[1])
    u = np.asarray(vals, dtype=f32).reshape(shape)
    w = (u * f32(2.0) - f32(1.0)) * f32(scale)
    w.setflags(write=False)
    return w, state


@functools.lru_cache(maxsize=64)
def load_model(model_id: str) -> ToyModel:
    seed = int.from_bytes(hashlib.sha256(model_id.encode()).digest()[:8], "big")
    state = PrngState.from_seed(seed)
    embed, state = _weights(state, (VOCAB_SIZE, HIDDEN_SIZE), 1.0)
    w_hidden, state = _weights(state, (HIDDEN_SIZE, HIDDEN_SIZE), 1.7 / HIDDEN_SIZE**0.5)
    w_out, state = _weights(state, (VOCAB_SIZE, HIDDEN_SIZE), 2.5 / HIDDEN_SIZE**0.5)
    return ToyModel(embed, w_hidden, w_out)


def _validate(exec_: ExecutionTuple) -> ArchProfile:
    profile = get_profile(exec_.arch)
    bad = [t for t in exec_.prompt if t >= VOCAB_SIZE]
    if bad:
        raise InferenceError(f"prompt token {bad[0]} outside toy vocabulary of {VOCAB_SIZE}")
    return profile


class _Seq:
    __slots__ = ("feed", "pos", "remaining", "prng", "tokens", "trace", "policy")

    def __init__(self, exec_: ExecutionTuple) -> None:
        self.feed = list(exec_.prompt)
        self.pos = 0
        self.remaining = exec_.decode_policy.max_tokens
        self.prng = PrngState.from_seed(exec_.seed)
        self.tokens: list[int] = []
        self.trace: list[np.ndarray] = []
        self.policy = exec_.decode_policy


def _run_group(model: ToyModel, profile: ArchProfile, execs: Sequence[ExecutionTuple]) -> list[InferenceOutput]:
    """Step-interleaved execution of sequences sharing a model and profile.

    Per tick every sequence with pending input consumes one token, then every
    sequence whose input is exhausted emits one token. Rows never interact, so
    each sequence's bytes are independent of who else is in the batch.
    """
    seqs = [_Seq(e) for e in execs]
    h = np.zeros((len(seqs), HIDDEN_SIZE), dtype=f32)
    lo, hi = f32(-STATE_CLIP), f32(STATE_CLIP)
    while True:
        feeding = [i for i, s in enumerate(seqs) if s.remaining > 0 and s.pos < len(s.feed)]
        if feeding:
            toks = [seqs[i].feed[seqs[i].pos] for i in feeding]
            x = model.embed[toks] + h[feeding]
            h[feeding] = np.clip(matvec_unchecked(model.w_hidden, x, profile), lo, hi)
            for i in feeding:
                seqs[i].pos += 1
        emitting = [i for i, s in enumerate(seqs) if s.remaining > 0 and s.pos >= len(s.feed)]
        if not feeding and not emitting:
            break
        if emitting:
            logits = matvec_unchecked(model.w_out, h[emitting], profile)
            for row, i in enumerate(emitting):
                s = seqs[i]
                probs = softmax_unchecked(logits[row])
                tok, s.prng = decode_step(probs, s.policy, s.prng)
                s.tokens.append(tok)
                s.trace.append(logits[row].copy())
                s.feed.append(tok)
                s.remaining -= 1
    return [InferenceOutput(tuple(s.tokens), tuple(s.trace)) for s in seqs]


def infer(exec_: ExecutionTuple) -> InferenceOutput:
    """Run one execution tuple; the output is a pure function of the tuple."""
    profile = _validate(exec_)
    return _run_group(load_model(exec_.model_id), profile, [exec_])[0]


def infer_batch(execs: Iterable[ExecutionTuple], batch_size: int | None = None) -> list[InferenceOutput]:
    """Run many tuples, interleaving up to ``batch_size`` sequences per group.

    Tuples are grouped by (model, arch) in arrival order and chunked; output
    order matches input order.
    """
    execs = list(execs)
    if batch_size is not None and batch_size < 1:
        raise ValueError("batch_size must be positive")
    results: list[InferenceOutput | None] = [None] * len(execs)
    groups: dict[tuple[str, str], list[int]] = {}
    for i, e in enumerate(execs):
        _validate(e)
        groups.setdefault((e.model_id, e.arch), []).append(i)
    for (model_id, arch), idxs in groups.items():
        size = batch_size or len(idxs)
        for start in range(0, len(idxs), size):
            chunk = idxs[start : start + size]
            outs = _run_group(load_model(model_id), PROFILES[arch], [execs[i] for i in chunk])
            for i, out in zip(chunk, outs):
                results[i] = out
    return results  # type: ignore[return-value]
