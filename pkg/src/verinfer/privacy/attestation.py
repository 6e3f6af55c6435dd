"""Mock remote attestation: a simulator-held root key signs enclave quotes."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Optional

from ..receipts.codec import CodecError, Reader, Writer
from ..receipts.receipt import SigningKey, verify_signature

QUOTE_TAG = b"QUOT"
NONCE_LEN = 16


def measurement(container_digest: bytes, code_version: str = "1") -> bytes:
    """Hash identifying the loaded enclave image."""
    return hashlib.sha256(b"verinfer-measure" + container_digest + code_version.encode()).digest()


@dataclass(frozen=True)
class AttestationQuote:
    measurement: bytes
    nonce: bytes
    issued_at: int
    hw_sig: bytes = b""

    def body(self) -> bytes:
        return QUOTE_TAG + self.measurement + self.nonce + struct.pack(">Q", self.issued_at)

    def to_bytes(self) -> bytes:
        return Writer().blob(self.measurement).blob(self.nonce).u64(self.issued_at).blob(self.hw_sig).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> AttestationQuote:
        r = Reader(data)
        q = cls(r.blob(), r.blob(), r.u64(), r.blob())
        r.finish()
        if len(q.measurement) != 32 or len(q.nonce) != NONCE_LEN:
            raise CodecError("malformed attestation quote")
        return q


class AttestationRoot:
    """Stands in for the hardware vendor's attestation key."""

    def __init__(self, seed: bytes | str = b"attestation-root") -> None:
        self._key = SigningKey.from_seed(seed if isinstance(seed, bytes) else seed.encode())
        self.public_bytes = self._key.public_bytes

    def attest(self, measurement_: bytes, nonce: bytes, issued_at: int) -> AttestationQuote:
        if len(measurement_) != 32 or len(nonce) != NONCE_LEN:
            raise ValueError("measurement must be 32 bytes and nonce 16 bytes")
        q = AttestationQuote(measurement_, nonce, issued_at)
        return AttestationQuote(measurement_, nonce, issued_at, self._key.sign(q.body()))


@dataclass
class QuotePolicy:
    """Verifier-side checks; keeps its own record of consumed nonces."""

    root_public: bytes
    approved: frozenset[bytes]
    freshness_window: int = 2
    used_nonces: set[bytes] = field(default_factory=set)

    def problem(self, quote: Optional[AttestationQuote], now: int, consume: bool = True) -> Optional[str]:
        """None when acceptable, else one of identity/freshness/replay."""
        if quote is None or not verify_signature(self.root_public, quote.body(), quote.hw_sig):
            return "identity"
        if quote.measurement not in self.approved:
            return "identity"
        if quote.issued_at > now or now - quote.issued_at > self.freshness_window:
            return "freshness"
        if quote.nonce in self.used_nonces:
            return "replay"
        if consume:
            self.used_nonces.add(quote.nonce)
        return None
