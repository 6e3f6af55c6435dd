"""Hybrid payload encryption: X25519 agreement, HKDF-SHA256, AES-256-GCM.

Envelope layout::

    b"VENC" | u8 version | u32 epoch | 32-byte ephemeral public | 12-byte nonce | AEAD(ct+tag)

The header is authenticated as associated data. The plaintext is
u32 len(req) | req | out.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

MAGIC = b"VENC"
VERSION = 1
_HEADER = struct.Struct(">4sBI32s12s")


class DecryptionError(ValueError):
    """Authentication failed; no partial plaintext is ever returned."""


def det_bytes(seed: bytes, label: str, n: int) -> bytes:
    return hashlib.shake_256(label.encode() + b"\x00" + seed).digest(n)


def _raw_public(sk: X25519PrivateKey) -> bytes:
    return sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


def public_from_private(secret: bytes) -> bytes:
    return _raw_public(X25519PrivateKey.from_private_bytes(bytes(secret)))


@dataclass(frozen=True)
class AppKeyPair:
    secret: bytes
    public: bytes

    @classmethod
    def from_seed(cls, seed: bytes) -> AppKeyPair:
        secret = det_bytes(seed, "app-key", 32)
        return cls(secret, public_from_private(secret))


def _derive(shared: bytes, eph_pub: bytes, recipient: bytes) -> bytes:
    return HKDF(hashes.SHA256(), 32, salt=None, info=b"verinfer-payload" + eph_pub + recipient).derive(shared)


def encrypt_payload(public_key: bytes, req_bytes: bytes, out_bytes: bytes, rng_seed: bytes, epoch: int = 0) -> bytes:
    eph = X25519PrivateKey.from_private_bytes(det_bytes(rng_seed, "ephemeral", 32))
    eph_pub = _raw_public(eph)
    nonce = det_bytes(rng_seed, "nonce", 12)
    key = _derive(eph.exchange(X25519PublicKey.from_public_bytes(public_key)), eph_pub, public_key)
    header = _HEADER.pack(MAGIC, VERSION, epoch, eph_pub, nonce)
    pt = struct.pack(">I", len(req_bytes)) + req_bytes + out_bytes
    return header + AESGCM(key).encrypt(nonce, pt, header)


def envelope_epoch(ciphertext: bytes) -> int:
    if len(ciphertext) < _HEADER.size:
        raise DecryptionError("ciphertext shorter than header")
    magic, ver, epoch, _, _ = _HEADER.unpack_from(ciphertext)
    if magic != MAGIC or ver != VERSION:
        raise DecryptionError("not a payload envelope")
    return epoch


def open_payload(secret: bytes | bytearray, ciphertext: bytes) -> tuple[bytes, bytes]:
    """Low-level decrypt. Callers outside this package go through an enclave."""
    envelope_epoch(ciphertext)
    header, body = ciphertext[: _HEADER.size], ciphertext[_HEADER.size :]
    _, _, _, eph_pub, nonce = _HEADER.unpack(header)
    sk = X25519PrivateKey.from_private_bytes(bytes(secret))
    recipient = _raw_public(sk)
    try:
        key = _derive(sk.exchange(X25519PublicKey.from_public_bytes(eph_pub)), eph_pub, recipient)
        pt = AESGCM(key).decrypt(nonce, body, header)
    except (InvalidTag, ValueError) as exc:
        raise DecryptionError("payload authentication failed") from exc
    if len(pt) < 4:
        raise DecryptionError("payload too short")
    (n,) = struct.unpack(">I", pt[:4])
    if 4 + n > len(pt):
        raise DecryptionError("payload length prefix out of range")
    return pt[4 : 4 + n], pt[4 + n :]
