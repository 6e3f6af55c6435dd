"""Signed receipts, response metadata and the approved-environment registry."""

from __future__ import annotations

import base64
import dataclasses
import functools
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec

from ..detcore import PROFILES, DecodeKind, DecodePolicy, ExecutionTuple, InferenceOutput
from .codec import RECEIPT_TAG, VERSION, CodecError, Reader, Writer, encode_exec, hash_commit, read_policy, write_policy

log = logging.getLogger(__name__)

_CURVE = ec.SECP256R1()
_N = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551  # P-256 group order


class SigningKey:
    """ECDSA P-256 with RFC 6979 nonces, so signatures are reproducible."""

    def __init__(self, private_key: ec.EllipticCurvePrivateKey) -> None:
        self._sk = private_key

    @classmethod
    def from_seed(cls, seed: Union[int, bytes, str]) -> SigningKey:
        material = seed if isinstance(seed, bytes) else str(seed).encode()
        scalar = int.from_bytes(hashlib.sha256(b"verinfer-signing-key" + material).digest(), "big")
        return cls(ec.derive_private_key(scalar % (_N - 1) + 1, _CURVE))

    def sign(self, message: bytes) -> bytes:
        return self._sk.sign(message, ec.ECDSA(hashes.SHA256(), deterministic_signing=True))

    @property
    def public_bytes(self) -> bytes:
        return self._sk.public_key().public_bytes(
            serialization.Encoding.X962, serialization.PublicFormat.CompressedPoint
        )


@functools.lru_cache(maxsize=1024)
def _load_public(public_key: bytes) -> ec.EllipticCurvePublicKey:
    return ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, public_key)


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        pk = _load_public(bytes(public_key))
        pk.verify(signature, message, ec.ECDSA(hashes.SHA256()))
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False


@dataclass(frozen=True)
class Registry:
    """Locally held stand-in for the on-chain model/container registration."""

    models: frozenset[str] = frozenset()
    containers: frozenset[bytes] = frozenset()
    archs: frozenset[str] = frozenset(PROFILES)
    drivers: frozenset[str] = frozenset()

    def environment_problems(self, model_id: str, container: bytes, arch: str, driver: str) -> list[str]:
        out = []
        if self.models and model_id not in self.models:
            out.append(f"model_id {model_id!r} not registered")
        if self.containers and container not in self.containers:
            out.append(f"container_digest {container.hex()} not approved")
        if arch not in self.archs:
            out.append(f"gpu_arch {arch!r} not in approved set {sorted(self.archs)}")
        if self.drivers and driver not in self.drivers:
            out.append(f"driver_tag {driver!r} not approved")
        return out

    def to_dict(self) -> dict:
        return {
            "models": sorted(self.models),
            "containers": sorted(c.hex() for c in self.containers),
            "archs": sorted(self.archs),
            "drivers": sorted(self.drivers),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Registry:
        return cls(
            models=frozenset(d.get("models", ())),
            containers=frozenset(bytes.fromhex(c) for c in d.get("containers", ())),
            archs=frozenset(d.get("archs", PROFILES)),
            drivers=frozenset(d.get("drivers", ())),
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> Registry:
        return cls.from_dict(json.loads(Path(path).read_text()))


DEFAULT_REGISTRY = Registry()


@dataclass(frozen=True)
class Receipt:
    model_id: str
    chain_id: str
    container_digest: bytes
    gpu_arch: str
    driver_tag: str
    decode_policy: DecodePolicy
    seed: int
    req_hash: bytes
    out_hash: bytes
    att_quote: Optional[bytes]
    timestamp: int
    da_pointer: str
    key_epoch: int
    sig: bytes = b""

    def body_bytes(self) -> bytes:
        """Canonical encoding of every field except ``sig``."""
        w = Writer().raw(RECEIPT_TAG).u8(VERSION)
        # receipt-table order first, then the schema-only fields
        w.text(self.model_id).text(self.chain_id).text(self.gpu_arch)
        w.blob(self.req_hash).blob(self.out_hash).text(self.da_pointer)
        w.blob(self.container_digest).text(self.driver_tag)
        write_policy(w, self.decode_policy)
        w.u64(self.seed)
        w.optional(self.att_quote, w.blob)
        w.u64(self.timestamp).u32(self.key_epoch)
        return w.getvalue()

    def to_bytes(self) -> bytes:
        return Writer().blob(self.body_bytes()).blob(self.sig).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> Receipt:
        outer = Reader(data)
        body, sig = outer.blob(), outer.blob()
        outer.finish()
        return cls.from_body(body, sig)

    @classmethod
    def from_body(cls, body: bytes, sig: bytes = b"") -> Receipt:
        r = Reader(body)
        r.expect_header(RECEIPT_TAG)
        model_id, chain_id, gpu_arch = r.text(), r.text(), r.text()
        req_hash, out_hash, da_pointer = r.blob(), r.blob(), r.text()
        container, driver = r.blob(), r.text()
        policy = read_policy(r)
        seed = r.u64()
        quote = r.optional(r.blob)
        timestamp, epoch = r.u64(), r.u32()
        r.finish()
        return cls(model_id, chain_id, container, gpu_arch, driver, policy, seed,
                   req_hash, out_hash, quote, timestamp, da_pointer, epoch, sig)

    def with_sig(self, sig: bytes) -> Receipt:
        return dataclasses.replace(self, sig=sig)

    def to_json_dict(self) -> dict:
        """Export using the published JSON field names; hashes and sig in hex."""
        params = {k: v for k, v in self.decode_policy.to_dict().items() if k != "kind"}
        return {
            "model_id": self.model_id,
            "chain_id": self.chain_id,
            "container_digest": self.container_digest.hex(),
            "gpu_arch": self.gpu_arch,
            "driver_tag": self.driver_tag,
            "decode_policy": self.decode_policy.kind.value,
            "decode_params": params,
            "seed": self.seed,
            "req_hash": self.req_hash.hex(),
            "out_hash": self.out_hash.hex(),
            "att_quote": base64.b64encode(self.att_quote).decode() if self.att_quote is not None else None,
            "sig": self.sig.hex(),
            "da_pointer": self.da_pointer,
            "epoch": self.key_epoch,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> Receipt:
        policy = DecodePolicy.from_dict({"kind": d["decode_policy"], **d["decode_params"]})
        quote = d.get("att_quote")
        return cls(
            model_id=d["model_id"],
            chain_id=d["chain_id"],
            container_digest=bytes.fromhex(d["container_digest"]),
            gpu_arch=d["gpu_arch"],
            driver_tag=d["driver_tag"],
            decode_policy=policy,
            seed=int(d["seed"]),
            req_hash=bytes.fromhex(d["req_hash"]),
            out_hash=bytes.fromhex(d["out_hash"]),
            att_quote=base64.b64decode(quote) if quote is not None else None,
            timestamp=int(d["timestamp"]),
            da_pointer=d["da_pointer"],
            key_epoch=int(d["epoch"]),
            sig=bytes.fromhex(d["sig"]),
        )


def make_receipt(
    exec_: ExecutionTuple,
    out: InferenceOutput,
    operator_key: SigningKey,
    da_pointer: str,
    key_epoch: int,
    quote: Optional[bytes] = None,
    *,
    chain_id: str = "verinfer-local",
    timestamp: int = 0,
) -> Receipt:
    """Commit to (exec, out) and sign the canonical receipt body."""
    unsigned = Receipt(
        model_id=exec_.model_id,
        chain_id=chain_id,
        container_digest=exec_.container_digest,
        gpu_arch=exec_.arch,
        driver_tag=exec_.driver_tag,
        decode_policy=exec_.decode_policy,
        seed=exec_.seed,
        req_hash=hash_commit(encode_exec(exec_)),
        out_hash=hash_commit(out.canonical_bytes),
        att_quote=quote,
        timestamp=timestamp,
        da_pointer=da_pointer,
        key_epoch=key_epoch,
    )
    return unsigned.with_sig(operator_key.sign(unsigned.body_bytes()))


def receipt_problems(receipt: Receipt, operator_pubkey: bytes, registry: Registry = DEFAULT_REGISTRY) -> list[str]:
    """Every reason ``receipt`` fails verification; empty when it verifies."""
    problems = []
    try:
        body = receipt.body_bytes()
    except (CodecError, ValueError, TypeError, AttributeError) as exc:
        return [f"malformed receipt: {exc}"]
    if not verify_signature(operator_pubkey, body, receipt.sig):
        problems.append("operator signature does not verify")
    for name in ("req_hash", "out_hash"):
        if len(getattr(receipt, name)) != 32:
            problems.append(f"{name} is not a SHA-256 digest")
    if len(receipt.container_digest) != 32:
        problems.append("container_digest is not a SHA-256 digest")
    if not 0 <= receipt.seed < 2**64:
        problems.append("seed outside unsigned 64-bit range")
    if receipt.decode_policy.kind not in tuple(DecodeKind):
        problems.append("decode_policy not enumerated")
    problems += registry.environment_problems(
        receipt.model_id, receipt.container_digest, receipt.gpu_arch, receipt.driver_tag
    )
    return problems


def verify_receipt(receipt: Receipt, operator_pubkey: bytes, registry: Registry = DEFAULT_REGISTRY) -> bool:
    problems = receipt_problems(receipt, operator_pubkey, registry)
    if problems:
        log.debug("receipt rejected: %s", "; ".join(problems))
    return not problems


@dataclass(frozen=True)
class ResponseMetadata:
    """Per-response verification metadata returned alongside a completion."""

    system_fingerprint: str
    determinism_seed: int
    receipt: Receipt
    eigenda_link: str

    @classmethod
    def for_receipt(cls, receipt: Receipt) -> ResponseMetadata:
        fp = fingerprint(receipt.container_digest, receipt.gpu_arch, receipt.driver_tag)
        return cls(fp, receipt.seed, receipt, receipt.da_pointer)

    def fingerprint_parts(self) -> tuple[bytes, str, str]:
        digest, arch, driver = self.system_fingerprint.split("|")
        return bytes.fromhex(digest), arch, driver

    def consistent(self) -> bool:
        r = self.receipt
        return (
            self.fingerprint_parts() == (r.container_digest, r.gpu_arch, r.driver_tag)
            and self.determinism_seed == r.seed
        )

    def to_json_dict(self) -> dict:
        return {
            "system_fingerprint": self.system_fingerprint,
            "determinism": {"seed": self.determinism_seed},
            "receipt": self.receipt.to_json_dict(),
            "eigendalink": self.eigenda_link,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> ResponseMetadata:
        return cls(d["system_fingerprint"], int(d["determinism"]["seed"]),
                   Receipt.from_json_dict(d["receipt"]), d["eigendalink"])


def fingerprint(container_digest: bytes, gpu_arch: str, driver_tag: str) -> str:
    return "|".join([container_digest.hex(), gpu_arch, driver_tag])
