"""Threshold key management, mock attestation, payload encryption and taint tracking."""

from .attestation import AttestationQuote, AttestationRoot, QuotePolicy, measurement
from .crypto import AppKeyPair, DecryptionError, encrypt_payload, envelope_epoch
from .kms import (
    AppKeyEpoch,
    Enclave,
    EnclaveContext,
    EpochStatus,
    KeyUnavailable,
    KmsShard,
    ShareDenied,
    ShareDelivery,
    ShareRequest,
    ThresholdKms,
    decrypt_payload,
    open_session,
    reconstruct_in_enclave,
)
from .shamir import KeyShare, ShamirError, consistent_polynomial, interpolate, reconstruct, split_secret
from .taint import PLAINTEXT_ROLES, Label, Role, TaintedBytes, TaintLedger, TaintViolation

__all__ = [
    "AppKeyEpoch",
    "AppKeyPair",
    "AttestationQuote",
    "AttestationRoot",
    "DecryptionError",
    "Enclave",
    "EnclaveContext",
    "EpochStatus",
    "KeyShare",
    "KeyUnavailable",
    "KmsShard",
    "Label",
    "PLAINTEXT_ROLES",
    "QuotePolicy",
    "Role",
    "ShamirError",
    "ShareDelivery",
    "ShareDenied",
    "ShareRequest",
    "TaintLedger",
    "TaintViolation",
    "TaintedBytes",
    "ThresholdKms",
    "consistent_polynomial",
    "decrypt_payload",
    "encrypt_payload",
    "envelope_epoch",
    "interpolate",
    "measurement",
    "open_session",
    "reconstruct",
    "reconstruct_in_enclave",
    "split_secret",
]
