"""Canonical encoding, commitments, signed receipts and auditor verification."""

from .codec import (
    CodecError,
    Reader,
    Writer,
    canonical_encode,
    decode_exec,
    encode_exec,
    hash_commit,
)
from .receipt import (
    DEFAULT_REGISTRY,
    Receipt,
    Registry,
    ResponseMetadata,
    SigningKey,
    fingerprint,
    make_receipt,
    receipt_problems,
    verify_receipt,
    verify_signature,
)

__all__ = [
    "CodecError",
    "DEFAULT_REGISTRY",
    "Reader",
    "Receipt",
    "Registry",
    "ResponseMetadata",
    "SigningKey",
    "Writer",
    "canonical_encode",
    "decode_exec",
    "encode_exec",
    "fingerprint",
    "hash_commit",
    "make_receipt",
    "receipt_problems",
    "verify_receipt",
    "verify_signature",
]

from .reproduce import (  # noqa: E402
    STEPS,
    Verdict,
    VerdictStatus,
    audit_public,
    pack_record,
    reproduce_and_verify,
    unpack_record,
)

__all__ += ["STEPS", "Verdict", "VerdictStatus", "audit_public", "pack_record", "reproduce_and_verify", "unpack_record"]
