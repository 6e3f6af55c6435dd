"""Canonical binary encoding and hash commitments.

Encoding rules: a 4-byte type tag and a version byte, then fields in a fixed
order; integers big-endian fixed width; strings UTF-8 and byte strings
u32-length-prefixed; optional values carry a one-byte presence flag. Every
field is self-delimiting, so the encoding is injective per record type.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Callable, Optional, TypeVar

from ..detcore import DecodeKind, DecodePolicy, ExecutionTuple, InferenceOutput

T = TypeVar("T")

EXEC_TAG = b"EXEC"
RECEIPT_TAG = b"RCPT"
VERSION = 1

_KINDS = [DecodeKind.GREEDY, DecodeKind.TOP_K, DecodeKind.NUCLEUS]


class CodecError(ValueError):
    pass


def hash_commit(data: bytes) -> bytes:
    """SHA-256 commitment."""
    return hashlib.sha256(data).digest()


class Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def raw(self, b: bytes) -> Writer:
        self._parts.append(bytes(b))
        return self

    def u8(self, v: int) -> Writer:
        return self.raw(struct.pack(">B", v))

    def u32(self, v: int) -> Writer:
        return self.raw(struct.pack(">I", v))

    def u64(self, v: int) -> Writer:
        return self.raw(struct.pack(">Q", v))

    def f64(self, v: float) -> Writer:
        return self.raw(struct.pack(">d", v))

    def blob(self, b: bytes) -> Writer:
        return self.u32(len(b)).raw(b)

    def text(self, s: str) -> Writer:
        return self.blob(s.encode("utf-8"))

    def optional(self, value: Optional[T], put: Callable[[T], object]) -> Writer:
        if value is None:
            return self.u8(0)
        self.u8(1)
        put(value)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes) -> None:
        self.data = bytes(data)
        self.pos = 0

    def raw(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CodecError(f"truncated input at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.raw(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.raw(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.raw(8))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self.raw(8))[0]

    def blob(self) -> bytes:
        return self.raw(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CodecError(f"invalid UTF-8: {exc}") from None

    def optional(self, get: Callable[[], T]) -> Optional[T]:
        flag = self.u8()
        if flag == 0:
            return None
        if flag != 1:
            raise CodecError(f"bad presence flag {flag}")
        return get()

    def expect_header(self, tag: bytes) -> None:
        got = self.raw(4)
        if got != tag:
            raise CodecError(f"expected record tag {tag!r}, got {got!r}")
        ver = self.u8()
        if ver != VERSION:
            raise CodecError(f"unsupported encoding version {ver}")

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise CodecError(f"{len(self.data) - self.pos} trailing bytes")


def write_policy(w: Writer, policy: DecodePolicy) -> None:
    w.u8(_KINDS.index(policy.kind)).u32(policy.max_tokens)
    w.optional(policy.k, w.u32)
    w.optional(policy.p, w.f64)


def read_policy(r: Reader) -> DecodePolicy:
    idx = r.u8()
    if idx >= len(_KINDS):
        raise CodecError(f"unknown decode policy kind {idx}")
    max_tokens = r.u32()
    k = r.optional(r.u32)
    p = r.optional(r.f64)
    try:
        return DecodePolicy(_KINDS[idx], max_tokens, k=k, p=p)
    except ValueError as exc:
        raise CodecError(str(exc)) from None


def encode_exec(e: ExecutionTuple) -> bytes:
    w = Writer().raw(EXEC_TAG).u8(VERSION)
    w.text(e.model_id).blob(e.container_digest).text(e.arch).text(e.driver_tag)
    write_policy(w, e.decode_policy)
    w.u64(e.seed).u32(len(e.prompt))
    for t in e.prompt:
        w.u32(t)
    return w.getvalue()


def decode_exec(data: bytes) -> ExecutionTuple:
    r = Reader(data)
    r.expect_header(EXEC_TAG)
    model_id, digest, arch, driver = r.text(), r.blob(), r.text(), r.text()
    policy = read_policy(r)
    seed = r.u64()
    prompt = tuple(r.u32() for _ in range(r.u32()))
    r.finish()
    try:
        return ExecutionTuple(model_id, digest, arch, driver, policy, seed, prompt)
    except ValueError as exc:
        raise CodecError(str(exc)) from None


def canonical_encode(record) -> bytes:
    """Encode an ExecutionTuple, InferenceOutput or receipt body."""
    from .receipt import Receipt  # local: receipt imports this module

    if isinstance(record, ExecutionTuple):
        return encode_exec(record)
    if isinstance(record, InferenceOutput):
        return record.canonical_bytes
    if isinstance(record, Receipt):
        return record.body_bytes()
    raise TypeError(f"no canonical encoding for {type(record).__name__}")
