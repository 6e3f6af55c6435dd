"""Auditor-side reproduce-and-verify.

Given a DA pointer and the response metadata, an auditor fetches the
published (cipher, receipt) record, checks the operator signature, opens the
payload through an attested key session, re-runs the inference from the
recorded tuple and compares commitments. Every step is named so a failure
says exactly where the chain broke.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

from ..da import DaError, DataUnavailable, DaPointer, InclusionProof, verify_inclusion
from ..detcore import InferenceError, infer
from .codec import CodecError, Reader, Writer, decode_exec, hash_commit
from .receipt import DEFAULT_REGISTRY, Receipt, Registry, ResponseMetadata, receipt_problems

log = logging.getLogger(__name__)

STEPS = (
    "fetch",
    "metadata",
    "signature",
    "inclusion",
    "epoch",
    "decrypt",
    "request-binding",
    "reexecute",
    "hash-compare",
)


class VerdictStatus(enum.Enum):
    VERIFIED = "VERIFIED"
    INVALID = "INVALID"


@dataclass(frozen=True)
class Verdict:
    status: VerdictStatus
    detail: str
    step: Optional[str] = None  # failing step, None when verified

    @property
    def ok(self) -> bool:
        return self.status is VerdictStatus.VERIFIED


def _fail(step: str, detail: str) -> Verdict:
    log.info("reproduce failed at %s: %s", step, detail)
    return Verdict(VerdictStatus.INVALID, f"{step}: {detail}", step)


class DaReader(Protocol):
    def fetch_with_proof(self, pointer: DaPointer | str) -> tuple[bytes, InclusionProof]: ...

    def root_of(self, slot_id: int) -> bytes: ...


# Returns a context manager holding the reconstructed key for ``epoch``; it
# raises ShareDenied when the KMS refuses (for example a retired epoch).
KeyAccess = Callable[[int], object]


def pack_record(cipher: bytes, receipt: Receipt) -> bytes:
    """The DA blob: length-prefixed ciphertext then the signed receipt."""
    return Writer().blob(cipher).blob(receipt.to_bytes()).getvalue()


def unpack_record(blob: bytes) -> tuple[bytes, Receipt]:
    r = Reader(blob)
    cipher, rec = r.blob(), r.blob()
    r.finish()
    return cipher, Receipt.from_bytes(rec)


def audit_public(
    da_pointer: DaPointer | str,
    meta: ResponseMetadata,
    da: DaReader,
    operator_pubkey: bytes,
    registry: Registry = DEFAULT_REGISTRY,
) -> tuple[Verdict, Optional[bytes], Optional[Receipt], Optional[InclusionProof]]:
    """Checks that need no plaintext: fetch, metadata, signature, inclusion."""
    try:
        blob, proof = da.fetch_with_proof(da_pointer)
        cipher, receipt = unpack_record(blob)
    except DataUnavailable as exc:
        return _fail("fetch", f"record withheld ({exc})"), None, None, None
    except (DaError, CodecError, ValueError) as exc:
        return _fail("fetch", str(exc)), None, None, None

    if not meta.consistent():
        return _fail("metadata", "system_fingerprint or seed disagrees with receipt"), cipher, receipt, proof
    if meta.receipt != receipt or meta.eigenda_link != str(da_pointer) or receipt.da_pointer != str(da_pointer):
        return _fail("metadata", "response metadata does not match the published record"), cipher, receipt, proof

    problems = receipt_problems(receipt, operator_pubkey, registry)
    if problems:
        return _fail("signature", "; ".join(problems)), cipher, receipt, proof

    try:
        trusted = da.root_of(proof.slot_id)
    except DaError as exc:
        return _fail("inclusion", str(exc)), cipher, receipt, proof
    if not verify_inclusion(proof, trusted):
        return _fail("inclusion", "inclusion proof does not reproduce the batch root"), cipher, receipt, proof
    return Verdict(VerdictStatus.VERIFIED, "public checks passed"), cipher, receipt, proof


def reproduce_and_verify(
    da_pointer: DaPointer | str,
    meta: ResponseMetadata,
    key_access: KeyAccess,
    *,
    da: DaReader,
    operator_pubkey: bytes,
    registry: Registry = DEFAULT_REGISTRY,
    request_hash: Optional[bytes] = None,
) -> Verdict:
    """Full reproduction; VERIFIED only if every step in ``STEPS`` passes.

    ``request_hash`` is the client's own commitment to its request, when the
    caller has it; a receipt for some other request then fails binding.
    """
    from ..privacy import DecryptionError, KeyUnavailable, ShareDenied, decrypt_payload, envelope_epoch

    public, cipher, receipt, _ = audit_public(da_pointer, meta, da, operator_pubkey, registry)
    if not public.ok:
        return public
    assert cipher is not None and receipt is not None

    try:
        sealed_epoch = envelope_epoch(cipher)
    except DecryptionError as exc:
        return _fail("decrypt", str(exc))
    if sealed_epoch != receipt.key_epoch:
        return _fail("epoch", f"payload sealed to epoch {sealed_epoch}, receipt names {receipt.key_epoch}")

    try:
        session = key_access(receipt.key_epoch)
    except ShareDenied as exc:
        step = "epoch" if exc.reason == "epoch" else "decrypt"
        return _fail(step, f"key release denied ({exc})")

    with session:  # type: ignore[attr-defined]
        try:
            req_bytes, out_bytes = decrypt_payload(session, cipher)  # type: ignore[arg-type]
        except (DecryptionError, KeyUnavailable) as exc:
            return _fail("decrypt", str(exc))

    if hash_commit(req_bytes) != receipt.req_hash:
        return _fail("request-binding", "decrypted request does not hash to req_hash")
    if request_hash is not None and request_hash != receipt.req_hash:
        return _fail("request-binding", "receipt answers a different request")
    try:
        exec_ = decode_exec(req_bytes)
    except CodecError as exc:
        return _fail("request-binding", f"undecodable request: {exc}")
    recorded = (receipt.model_id, receipt.container_digest, receipt.gpu_arch, receipt.driver_tag,
                receipt.decode_policy, receipt.seed)
    if (exec_.model_id, exec_.container_digest, exec_.arch, exec_.driver_tag, exec_.decode_policy, exec_.seed) != recorded:
        return _fail("request-binding", "receipt environment fields differ from the request")

    try:
        redo = infer(exec_)
    except InferenceError as exc:
        return _fail("reexecute", str(exc))

    if hash_commit(redo.canonical_bytes) != receipt.out_hash:
        return _fail("hash-compare", "re-executed output does not match out_hash")
    if out_bytes != redo.canonical_bytes:
        return _fail("hash-compare", "published ciphertext carries a different output")
    return Verdict(VerdictStatus.VERIFIED, "all steps passed")
