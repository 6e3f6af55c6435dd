"""Bit-deterministic toy inference engine."""

from .decode import DecodeError, DecodeKind, DecodePolicy, decode_step, select_token, truncate
from .fp import (
    ArchProfile,
    FmaMode,
    NonFiniteInput,
    ReductionOrder,
    canonical_reduce,
    det_exp,
    det_matvec,
    det_softmax,
    fma32,
)
from .model import (
    HIDDEN_SIZE,
    PROFILES,
    VOCAB_SIZE,
    ExecutionTuple,
    InferenceError,
    InferenceOutput,
    get_profile,
    infer,
    infer_batch,
    load_model,
)
from .prng import PrngState, splitmix64

__all__ = [
    "ArchProfile",
    "DecodeError",
    "DecodeKind",
    "DecodePolicy",
    "ExecutionTuple",
    "FmaMode",
    "HIDDEN_SIZE",
    "InferenceError",
    "InferenceOutput",
    "NonFiniteInput",
    "PROFILES",
    "PrngState",
    "ReductionOrder",
    "VOCAB_SIZE",
    "canonical_reduce",
    "decode_step",
    "det_exp",
    "det_matvec",
    "det_softmax",
    "fma32",
    "get_profile",
    "infer",
    "infer_batch",
    "load_model",
    "select_token",
    "splitmix64",
    "truncate",
]
