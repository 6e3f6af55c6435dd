"""Threshold key management with attestation-gated share release.

The application key of each epoch is Shamir-split across n shards. An enclave
obtains t shares by presenting a fresh quote; both ends authenticate each
other (quote plus session signature one way, shard signature the other) before
a share moves. Shares travel inside that modeled session without extra
wrapping.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

from ..receipts.receipt import SigningKey, verify_signature
from .attestation import NONCE_LEN, AttestationQuote, AttestationRoot, QuotePolicy, measurement
from .crypto import AppKeyPair, DecryptionError, det_bytes, envelope_epoch, open_payload, public_from_private
from .shamir import KeyShare, ShamirError, reconstruct, split_secret
from .taint import Label, Role, TaintLedger, TaintViolation

log = logging.getLogger(__name__)


class ShareDenied(PermissionError):
    """Share release refused; ``reason`` is identity, freshness, replay or epoch."""

    def __init__(self, reason: str, detail: str = "") -> None:
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class KeyUnavailable(RuntimeError):
    pass


class EpochStatus(enum.Enum):
    ACTIVE = "active"
    RETIRED = "retired"


@dataclass
class AppKeyEpoch:
    epoch: int
    public_key: bytes
    status: EpochStatus
    holders: tuple[int, ...]  # shard ids holding a share
    created_at: int = 0


@dataclass(frozen=True)
class ShareRequest:
    quote: Optional[AttestationQuote]
    session_pub: bytes
    salt: bytes
    epoch: int
    shard_id: int
    sig: bytes = b""

    def transcript(self) -> bytes:
        qb = self.quote.body() if self.quote is not None else b""
        return b"SREQ" + qb + self.session_pub + self.salt + struct.pack(">II", self.epoch, self.shard_id)


@dataclass(frozen=True)
class ShareDelivery:
    share: KeyShare
    session_pub: bytes
    sig: bytes

    @staticmethod
    def transcript(share: KeyShare, session_pub: bytes) -> bytes:
        return b"SDEL" + struct.pack(">IIII", share.shard_id, share.x, share.threshold, share.epoch) + share.y + session_pub


def session_nonce(session_pub: bytes, salt: bytes) -> bytes:
    """Quote nonce that binds the enclave's session key into the attestation."""
    return hashlib.sha256(b"verinfer-session" + session_pub + salt).digest()[:NONCE_LEN]


class KmsShard:
    """One independent share holder; handles requests one at a time."""

    def __init__(self, shard_id: int, quote_policy: QuotePolicy, epochs: dict[int, AppKeyEpoch], seed: bytes) -> None:
        self.shard_id = shard_id
        self.quote_policy = quote_policy
        self._epochs = epochs  # shared view of the epoch table
        self._shares: dict[int, KeyShare] = {}
        self._key = SigningKey.from_seed(b"kms-shard" + seed + struct.pack(">I", shard_id))
        self.public_bytes = self._key.public_bytes
        self.released = 0
        self.denials: list[str] = []

    def store(self, share: KeyShare) -> None:
        self._shares[share.epoch] = share

    def drop(self, epoch: int) -> None:
        self._shares.pop(epoch, None)

    def _deny(self, reason: str, detail: str) -> ShareDenied:
        self.denials.append(reason)
        log.debug("shard %d denies: %s (%s)", self.shard_id, reason, detail)
        return ShareDenied(reason, detail)

    def release_share(self, req: ShareRequest, now: int) -> ShareDelivery:
        q = req.quote
        if q is None:
            raise self._deny("identity", "no attestation quote")
        if req.shard_id != self.shard_id:
            raise self._deny("identity", "request addressed to another shard")
        if q.nonce != session_nonce(req.session_pub, req.salt):
            raise self._deny("identity", "quote not bound to session key")
        if not verify_signature(req.session_pub, req.transcript(), req.sig):
            raise self._deny("identity", "session signature invalid")
        problem = self.quote_policy.problem(q, now, consume=False)
        if problem:
            raise self._deny(problem, f"quote issued at {q.issued_at}, now {now}")
        ep = self._epochs.get(req.epoch)
        if ep is None or ep.status is not EpochStatus.ACTIVE or req.epoch not in self._shares:
            raise self._deny("epoch", f"epoch {req.epoch} not active")
        self.quote_policy.used_nonces.add(q.nonce)
        share = self._shares[req.epoch]
        self.released += 1
        return ShareDelivery(share, req.session_pub, self._key.sign(ShareDelivery.transcript(share, req.session_pub)))


class ThresholdKms:
    def __init__(
        self,
        t: int,
        n: int,
        root_public: bytes,
        approved_measurements: Sequence[bytes],
        seed: bytes = b"kms",
        freshness_window: int = 2,
        now: int = 0,
    ) -> None:
        if not 1 <= t <= n <= 255:
            raise ShamirError(f"need 1 <= t <= n <= 255, got t={t}, n={n}")
        self.t, self.n = t, n
        self.seed = seed
        self.freshness_window = freshness_window
        self.approved = frozenset(approved_measurements)
        self.epochs: dict[int, AppKeyEpoch] = {}
        self.shards = [
            KmsShard(i, QuotePolicy(root_public, self.approved, freshness_window), self.epochs, seed)
            for i in range(1, n + 1)
        ]
        self._install_epoch(1, now)

    def _install_epoch(self, epoch: int, now: int) -> AppKeyEpoch:
        kp = AppKeyPair.from_seed(det_bytes(self.seed, f"epoch-{epoch}", 32))
        shares = split_secret(kp.secret, self.t, self.n, det_bytes(self.seed, f"split-{epoch}", 32), epoch)
        for shard, share in zip(self.shards, shares):
            shard.store(share)
        rec = AppKeyEpoch(epoch, kp.public, EpochStatus.ACTIVE, tuple(s.shard_id for s in shares), now)
        self.epochs[epoch] = rec
        return rec

    @property
    def active(self) -> AppKeyEpoch:
        (ep,) = [e for e in self.epochs.values() if e.status is EpochStatus.ACTIVE]
        return ep

    def public_key(self, epoch: Optional[int] = None) -> bytes:
        return self.epochs[self.active.epoch if epoch is None else epoch].public_key

    def shard_public(self, shard_id: int) -> bytes:
        return self.shards[shard_id - 1].public_bytes

    def rotate_epoch(self, governance_approval: bool, now: int = 0) -> AppKeyEpoch:
        """Retire the active epoch and install a fresh key split across shards."""
        if not governance_approval:
            raise PermissionError("key rotation requires governance approval")
        old = self.active
        old.status = EpochStatus.RETIRED
        for shard in self.shards:
            shard.drop(old.epoch)
        return self._install_epoch(old.epoch + 1, now)

    def policy_dict(self) -> dict:
        return {
            "approved_measurements": sorted(m.hex() for m in self.approved),
            "t": self.t,
            "n": self.n,
            "freshness_window": self.freshness_window,
            "epochs": [
                {"epoch": e.epoch, "status": e.status.value, "public_key": e.public_key.hex()}
                for e in sorted(self.epochs.values(), key=lambda e: e.epoch)
            ],
        }

    def save_policy(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.policy_dict(), indent=1))

    @property
    def total_released(self) -> int:
        return sum(s.released for s in self.shards)


class EnclaveContext:
    """Single-session holder of a reconstructed application key."""

    def __init__(self, measurement_: bytes, epoch: int, owner: str, ledger: Optional[TaintLedger] = None) -> None:
        self.measurement = measurement_
        self.epoch = epoch
        self.owner = owner
        self.taint = Role.ENCLAVE
        self.ledger = ledger
        self._key: Optional[bytearray] = None
        self._spent: list[bytearray] = []  # zeroized buffers, kept so tests can inspect them
        if ledger is not None:
            ledger.register_context(self)

    @property
    def has_key(self) -> bool:
        return self._key is not None

    def install(self, secret: bytes) -> None:
        self.zeroize()
        self._key = bytearray(secret)

    def zeroize(self) -> None:
        if self._key is not None:
            for i in range(len(self._key)):
                self._key[i] = 0
            self._spent.append(self._key)
            self._key = None

    def __enter__(self) -> EnclaveContext:
        return self

    def __exit__(self, *exc) -> None:
        self.zeroize()

    def observe_plaintext(self, what: str) -> None:
        if self.ledger is not None:
            self.ledger.observe(Role.ENCLAVE, self.owner, Label.PLAINTEXT, what)


class Enclave:
    """A mock TEE instance loaded with a given container image."""

    def __init__(
        self,
        owner: str,
        container_digest: bytes,
        root: AttestationRoot,
        code_version: str = "1",
        ledger: Optional[TaintLedger] = None,
    ) -> None:
        self.owner = owner
        self.measurement = measurement(container_digest, code_version)
        self.root = root
        self.ledger = ledger
        self._session = SigningKey.from_seed(b"enclave-session" + owner.encode() + self.measurement)
        self._counter = 0

    def quote(self, now: int) -> tuple[AttestationQuote, bytes]:
        self._counter += 1
        salt = struct.pack(">Q", self._counter)
        nonce = session_nonce(self._session.public_bytes, salt)
        return self.root.attest(self.measurement, nonce, now), salt

    def share_request(self, quote: Optional[AttestationQuote], salt: bytes, epoch: int, shard_id: int) -> ShareRequest:
        req = ShareRequest(quote, self._session.public_bytes, salt, epoch, shard_id)
        return ShareRequest(quote, req.session_pub, salt, epoch, shard_id, self._session.sign(req.transcript()))

    def accept(self, delivery: ShareDelivery, shard_public: bytes) -> KeyShare:
        """Check the shard's signature before trusting a delivered share."""
        msg = ShareDelivery.transcript(delivery.share, self._session.public_bytes)
        if delivery.session_pub != self._session.public_bytes or not verify_signature(shard_public, msg, delivery.sig):
            raise ShareDenied("identity", f"delivery from shard {delivery.share.shard_id} not authenticated")
        return delivery.share

    def context(self, epoch: int) -> EnclaveContext:
        return EnclaveContext(self.measurement, epoch, self.owner, self.ledger)


def reconstruct_in_enclave(ctx: EnclaveContext, shares: Sequence[KeyShare], expected_public: Optional[bytes] = None) -> None:
    if any(s.epoch != ctx.epoch for s in shares):
        raise ShamirError("share epoch differs from session epoch")
    secret = reconstruct(shares)
    if expected_public is not None and public_from_private(secret) != expected_public:
        raise ShamirError("reconstructed key does not match the epoch public key")
    ctx.install(secret)


def open_session(
    kms: ThresholdKms,
    enclave: Enclave,
    now: int,
    epoch: Optional[int] = None,
    presented: Optional[tuple[Optional[AttestationQuote], bytes]] = None,
) -> EnclaveContext:
    """Attest, collect t shares and reconstruct the epoch key inside a fresh context.

    ``presented`` replaces the freshly generated (quote, salt) pair; adversary
    scenarios use it to replay an old quote or to send none.
    """
    epoch = kms.active.epoch if epoch is None else epoch
    quote, salt = presented if presented is not None else enclave.quote(now)
    shares: list[KeyShare] = []
    denial: Optional[ShareDenied] = None
    for shard in kms.shards:
        if len(shares) >= kms.t:
            break
        try:
            delivery = shard.release_share(enclave.share_request(quote, salt, epoch, shard.shard_id), now)
            shares.append(enclave.accept(delivery, shard.public_bytes))
        except ShareDenied as d:
            denial = denial or d
    if len(shares) < kms.t:
        raise denial or ShareDenied("identity", "not enough shares")
    ctx = enclave.context(epoch)
    reconstruct_in_enclave(ctx, shares, kms.epochs[epoch].public_key)
    return ctx


def decrypt_payload(ctx: EnclaveContext, ciphertext: bytes) -> tuple[bytes, bytes]:
    if not isinstance(ctx, EnclaveContext):
        raise TaintViolation("payload decryption is only possible inside an enclave context")
    if ctx._key is None:
        raise KeyUnavailable("enclave context holds no key")
    if envelope_epoch(ciphertext) != ctx.epoch:
        raise DecryptionError(f"payload sealed to epoch {envelope_epoch(ciphertext)}, session holds {ctx.epoch}")
    req, out = open_payload(ctx._key, ciphertext)
    ctx.observe_plaintext("decrypted payload")
    return req, out
