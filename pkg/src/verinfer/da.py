"""Merkle-batched data-availability store.

Tree rules:
    leaf     = SHA-256(0x00 || blob)
    interior = SHA-256(0x01 || left || right)
    a level with an odd node count duplicates its last hash
    the empty tree's root is SHA-256(0x00), the leaf hash of b""

Batches are addressed by slot; one writer appends to the open slot and seals
it, after which the root is fixed and proofs can be served.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

LEAF_TAG = b"\x00"
NODE_TAG = b"\x01"
HASH_LEN = 32


class DaError(Exception):
    pass


class NotFound(DaError):
    pass


class DataUnavailable(DaError):
    """The record exists in a sealed batch but is withheld from readers."""


class NotSealed(DaError):
    pass


def leaf_hash(blob: bytes) -> bytes:
    return hashlib.sha256(LEAF_TAG + blob).digest()


def node_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_TAG + left + right).digest()


def _levels(leaf_hashes: Sequence[bytes]) -> list[list[bytes]]:
    level = list(leaf_hashes)
    levels = [level]
    while len(level) > 1:
        if len(level) % 2:
            level = level + [level[-1]]
        level = [node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2)]
        levels.append(level)
    return levels


def merkle_root(blobs: Sequence[bytes]) -> bytes:
    if not blobs:
        return leaf_hash(b"")
    return _levels([leaf_hash(b) for b in blobs])[-1][0]


def commit_prompts(documents: Sequence[bytes]) -> bytes:
    """Merkle root binding external documents referenced by a prompt."""
    return merkle_root(list(documents))


@dataclass(frozen=True)
class PathStep:
    sibling: bytes
    sibling_is_left: bool


def merkle_path(blobs: Sequence[bytes], index: int) -> tuple[PathStep, ...]:
    if not 0 <= index < len(blobs):
        raise NotFound(f"leaf index {index} out of range for {len(blobs)} leaves")
    path = []
    for level in _levels([leaf_hash(b) for b in blobs])[:-1]:
        padded = level + [level[-1]] if len(level) % 2 else level
        sib = index ^ 1
        path.append(PathStep(padded[sib], sibling_is_left=sib < index))
        index //= 2
    return tuple(path)


@dataclass(frozen=True, order=True)
class DaPointer:
    slot_id: int
    leaf_index: int

    def __str__(self) -> str:
        return f"da:{self.slot_id}:{self.leaf_index}"

    @classmethod
    def parse(cls, text: str) -> DaPointer:
        try:
            tag, slot, idx = text.split(":")
            if tag != "da":
                raise ValueError(tag)
            return cls(int(slot), int(idx))
        except ValueError:
            raise NotFound(f"malformed DA pointer {text!r}") from None


@dataclass(frozen=True)
class InclusionProof:
    slot_id: int
    root: bytes
    path: tuple[PathStep, ...]
    leaf: bytes

    def to_json_dict(self) -> dict:
        return {
            "slot_id": self.slot_id,
            "root": self.root.hex(),
            "path": [{"sibling": s.sibling.hex(), "side": "L" if s.sibling_is_left else "R"} for s in self.path],
            "leaf": self.leaf.hex(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> InclusionProof:
        path = tuple(PathStep(bytes.fromhex(s["sibling"]), s["side"] == "L") for s in d["path"])
        return cls(int(d["slot_id"]), bytes.fromhex(d["root"]), path, bytes.fromhex(d["leaf"]))


def verify_inclusion(proof: InclusionProof, trusted_root: bytes) -> bool:
    """Recompute the root from ``proof.leaf`` up the audit path."""
    try:
        h = leaf_hash(proof.leaf)
        for step in proof.path:
            if len(step.sibling) != HASH_LEN:
                return False
            h = node_hash(step.sibling, h) if step.sibling_is_left else node_hash(h, step.sibling)
        return h == proof.root == trusted_root
    except (TypeError, AttributeError):
        return False


@dataclass
class DaBatch:
    slot_id: int
    leaves: list[bytes] = field(default_factory=list)
    root: Optional[bytes] = None

    @property
    def sealed(self) -> bool:
        return self.root is not None

    def seal(self) -> bytes:
        if self.root is None:
            self.leaves = list(self.leaves)
            self.root = merkle_root(self.leaves)
        return self.root

    def proof(self, index: int) -> InclusionProof:
        if self.root is None:
            raise NotSealed(f"slot {self.slot_id} is still open")
        return InclusionProof(self.slot_id, self.root, merkle_path(self.leaves, index), self.leaves[index])

    def to_json_dict(self) -> dict:
        return {
            "slot_id": self.slot_id,
            "leaves": [b.hex() for b in self.leaves],
            "root": self.root.hex() if self.root is not None else None,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> DaBatch:
        batch = cls(int(d["slot_id"]), [bytes.fromhex(x) for x in d["leaves"]])
        root = batch.seal()
        if d.get("root") is not None and bytes.fromhex(d["root"]) != root:
            raise DaError(f"dump for slot {batch.slot_id}: root does not match leaves")
        return batch


class DaStore:
    """In-memory DA layer with optional withholding by a malicious participant."""

    def __init__(self, first_slot: int = 0) -> None:
        self.batches: dict[int, DaBatch] = {first_slot: DaBatch(first_slot)}
        self.open_slot = first_slot
        self.withheld_publishers: set[str] = set()
        self.censored: set[DaPointer] = set()
        self.pruned_before = first_slot

    @property
    def open_batch(self) -> DaBatch:
        return self.batches[self.open_slot]

    def reserve(self) -> DaPointer:
        """Pointer the next ``publish`` into the open batch will receive."""
        return DaPointer(self.open_slot, len(self.open_batch.leaves))

    def publish(self, blob: bytes, publisher: Optional[str] = None) -> DaPointer:
        ptr = self.reserve()
        self.open_batch.leaves.append(bytes(blob))
        if publisher is not None and publisher in self.withheld_publishers:
            self.censored.add(ptr)
        return ptr

    def seal(self) -> bytes:
        """Seal the open slot and open the next one; returns the sealed root."""
        root = self.open_batch.seal()
        self.open_slot += 1
        self.batches[self.open_slot] = DaBatch(self.open_slot)
        return root

    def root_of(self, slot_id: int) -> bytes:
        batch = self._batch(slot_id)
        if not batch.sealed:
            raise NotSealed(f"slot {slot_id} is still open")
        return batch.root  # type: ignore[return-value]

    def _batch(self, slot_id: int) -> DaBatch:
        try:
            return self.batches[slot_id]
        except KeyError:
            raise NotFound(f"slot {slot_id} unknown or pruned") from None

    def fetch(self, pointer: DaPointer) -> bytes:
        return self.fetch_with_proof(pointer)[0]

    def fetch_with_proof(self, pointer: Union[DaPointer, str]) -> tuple[bytes, InclusionProof]:
        if isinstance(pointer, str):
            pointer = DaPointer.parse(pointer)
        batch = self._batch(pointer.slot_id)
        if not 0 <= pointer.leaf_index < len(batch.leaves):
            raise NotFound(f"{pointer}: no such leaf")
        if pointer in self.censored:
            raise DataUnavailable(f"{pointer}: record withheld")
        proof = batch.proof(pointer.leaf_index)
        return proof.leaf, proof

    def prune(self, keep_from_slot: int) -> list[int]:
        """Drop sealed batches older than ``keep_from_slot``."""
        gone = [s for s, b in self.batches.items() if s < keep_from_slot and b.sealed]
        for s in gone:
            del self.batches[s]
        self.censored = {p for p in self.censored if p.slot_id not in gone}
        self.pruned_before = max(self.pruned_before, keep_from_slot)
        return gone

    def dump(self, path: Union[str, Path], slots: Optional[Iterable[int]] = None) -> None:
        chosen = sorted(slots) if slots is not None else sorted(s for s, b in self.batches.items() if b.sealed)
        Path(path).write_text(json.dumps([self.batches[s].to_json_dict() for s in chosen], indent=1))

    @staticmethod
    def load_dump(path: Union[str, Path]) -> dict[int, DaBatch]:
        data = json.loads(Path(path).read_text())
        if isinstance(data, dict):
            data = [data]
        batches = [DaBatch.from_json_dict(d) for d in data]
        return {b.slot_id: b for b in batches}


class DaArchive:
    """Read-only view over restored batches (auditor side of a dump)."""

    def __init__(self, batches: dict[int, DaBatch]) -> None:
        self.batches = batches

    @classmethod
    def load(cls, path: Union[str, Path]) -> DaArchive:
        return cls(DaStore.load_dump(path))

    def root_of(self, slot_id: int) -> bytes:
        try:
            return self.batches[slot_id].seal()
        except KeyError:
            raise NotFound(f"slot {slot_id} not in archive") from None

    def fetch_with_proof(self, pointer: Union[DaPointer, str]) -> tuple[bytes, InclusionProof]:
        if isinstance(pointer, str):
            pointer = DaPointer.parse(pointer)
        self.root_of(pointer.slot_id)
        batch = self.batches[pointer.slot_id]
        if not 0 <= pointer.leaf_index < len(batch.leaves):
            raise NotFound(f"{pointer}: no such leaf")
        proof = batch.proof(pointer.leaf_index)
        return proof.leaf, proof
