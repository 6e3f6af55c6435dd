"""Plaintext-visibility tracking.

Every hand-off of request/response data in the simulator is recorded as an
observation (role, label). Only the client and attested enclave contexts may
hold plaintext; anything else is an exposure.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class Label(enum.Enum):
    PLAINTEXT = "plaintext"
    CIPHERTEXT = "ciphertext"
    COMMITMENT = "commitment"


class Role(enum.Enum):
    CLIENT = "client"
    OPERATOR = "operator"
    DA = "da"
    KMS_SHARD = "kms_shard"
    ENCLAVE = "enclave"
    VERIFIER = "verifier"
    WATCHER = "watcher"
    AUDITOR = "auditor"


PLAINTEXT_ROLES = frozenset({Role.CLIENT, Role.ENCLAVE})


class TaintViolation(PermissionError):
    pass


@dataclass(frozen=True)
class TaintedBytes:
    data: bytes
    label: Label


@dataclass(frozen=True)
class Observation:
    role: Role
    actor: str
    label: Label
    what: str


@dataclass
class TaintLedger:
    """Records who saw what. ``strict`` turns exposures into exceptions."""

    strict: bool = True
    observations: list[Observation] = field(default_factory=list)
    contexts: list = field(default_factory=list)

    def observe(self, role: Role, actor: str, value: TaintedBytes | Label, what: str = "") -> None:
        label = value.label if isinstance(value, TaintedBytes) else value
        obs = Observation(role, actor, label, what)
        self.observations.append(obs)
        if self.strict and label is Label.PLAINTEXT and role not in PLAINTEXT_ROLES:
            raise TaintViolation(f"{role.value} {actor!r} would hold plaintext ({what})")

    def roles_holding(self, label: Label = Label.PLAINTEXT) -> set[Role]:
        return {o.role for o in self.observations if o.label is label}

    def exposures(self) -> list[Observation]:
        return [o for o in self.observations if o.label is Label.PLAINTEXT and o.role not in PLAINTEXT_ROLES]

    def register_context(self, ctx) -> None:
        self.contexts.append(ctx)

    def live_keys(self) -> list:
        """Enclave contexts still holding key material."""
        return [c for c in self.contexts if c.has_key]
