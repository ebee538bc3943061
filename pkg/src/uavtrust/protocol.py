"""Credentials and the pure verification steps of the authentication pipeline.

Everything here is a function of its inputs; the event-driven role machines
that call these live in :mod:`uavtrust.world`.

Relay layers: the first UAV learns the whole path from the SAC and wraps one
layer per later hop, innermost first.  Layer ``k`` is sealed to UAV ``k`` and
holds its function, its successor and the still-sealed layer ``k+1``, so each
UAV learns only who comes next.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from . import crypto
from .crypto import KeyPair, SealedBox, Signature, digest
from .ledger import ConsortiumLedger, LedgerRecord, Missing, RecordKind, canonical
from .model import Hop, SfcRequest


class AuthError(Exception):
    check = "auth"


class SignatureInvalid(AuthError):
    check = "SignatureInvalid"


class SealFailure(AuthError):
    check = "SealFailure"


class WrongRecipient(AuthError):
    check = "WrongRecipient"


class Expired(AuthError):
    check = "Expired"


class Stale(AuthError):
    check = "Stale"


class ProtocolViolation(Exception):
    pass


@dataclass(frozen=True)
class Rejection:
    task_id: str
    missing: frozenset[str]


@dataclass(frozen=True)
class ExecutionAuthorization:
    task_id: str
    uav_id: str
    hop_index: int
    granted_at: int


@dataclass(frozen=True)
class SecureAuthorizationCredential:
    task_id: str
    orchestrator_id: str
    not_before: int
    not_after: int
    sealed_path: SealedBox
    orch_signature: Signature | None = None

    def signed_bytes(self) -> bytes:
        head = canonical({
            "task_id": self.task_id,
            "orchestrator_id": self.orchestrator_id,
            "not_before": self.not_before,
            "not_after": self.not_after,
        })
        return head + b"\x00" + self.sealed_path.ciphertext


SAC = SecureAuthorizationCredential


@dataclass(frozen=True)
class HandoverCredential:
    task_id: str
    next_recipient_id: str
    issued_at: int
    hop_index: int
    sender_es: str
    sealed_body: SealedBox
    domain_signature: Signature | None = None

    def signed_bytes(self) -> bytes:
        # encrypt-then-sign: the signature covers the ciphertext
        head = canonical({
            "task_id": self.task_id,
            "next_recipient_id": self.next_recipient_id,
            "issued_at": self.issued_at,
            "hop_index": self.hop_index,
            "sender_es": self.sender_es,
        })
        return head + b"\x00" + self.sealed_body.ciphertext


HC = HandoverCredential


@dataclass(frozen=True)
class PathPayload:
    """What the first UAV learns from its SAC."""
    task_id: str
    hops: tuple[Hop, ...]
    seal_keys: Mapping[str, bytes]
    domain_keys: Mapping[str, bytes]  # ES id -> verify key

    def encode(self) -> bytes:
        return canonical({
            "task_id": self.task_id,
            "hops": [[h.uav_id, h.domain_id, h.function_tag] for h in self.hops],
            "seal_keys": {k: v.hex() for k, v in self.seal_keys.items()},
            "domain_keys": {k: v.hex() for k, v in self.domain_keys.items()},
        })

    @classmethod
    def decode(cls, raw: bytes) -> "PathPayload":
        d = json.loads(raw)
        return cls(
            d["task_id"],
            tuple(Hop(*h) for h in d["hops"]),
            {k: bytes.fromhex(v) for k, v in d["seal_keys"].items()},
            {k: bytes.fromhex(v) for k, v in d["domain_keys"].items()},
        )


def remaining_digest(hops: Sequence[Hop], start: int) -> bytes:
    return digest(canonical([[h.uav_id, h.domain_id, h.function_tag] for h in hops[start:]]))


@dataclass(frozen=True)
class RelayLayer:
    task_id: str
    hop_index: int
    uav_id: str
    function_tag: str
    successor: str | None
    remaining: bytes
    inner: bytes = b""

    def encode(self) -> bytes:
        head = canonical({
            "task_id": self.task_id,
            "hop_index": self.hop_index,
            "uav_id": self.uav_id,
            "function_tag": self.function_tag,
            "successor": self.successor,
            "remaining": self.remaining.hex(),
        })
        return head + b"\n" + self.inner

    @classmethod
    def decode(cls, raw: bytes) -> "RelayLayer":
        head, _, inner = raw.partition(b"\n")
        d = json.loads(head)
        return cls(d["task_id"], d["hop_index"], d["uav_id"], d["function_tag"], d["successor"],
                   bytes.fromhex(d["remaining"]), inner)


def build_layers(path: PathPayload, entropy: Iterable[bytes] | None = None) -> dict[int, SealedBox]:
    """Sealed relay layers for hops 1..L-1, keyed by hop index."""
    hops = path.hops
    seeds = iter(entropy) if entropy is not None else None
    layers: dict[int, SealedBox] = {}
    inner = b""
    for k in range(len(hops) - 1, 0, -1):
        hop = hops[k]
        succ = hops[k + 1].uav_id if k + 1 < len(hops) else None
        layer = RelayLayer(path.task_id, k, hop.uav_id, hop.function_tag, succ, remaining_digest(hops, k), inner)
        box = crypto.seal(path.seal_keys[hop.uav_id], layer.encode(), next(seeds) if seeds else None)
        layers[k] = box
        inner = box.ciphertext
    return layers


# phase 1 -------------------------------------------------------------------

def pre_verify_and_issue(
    orchestrator_id: str,
    signing_key: KeyPair | bytes,
    req: SfcRequest,
    ledger: ConsortiumLedger,
    now: int,
    sac_ttl: int,
    at: str | None = None,
    ephemeral_seed: bytes | None = None,
) -> SecureAuthorizationCredential | Rejection:
    """One atomic registry query over every hop UAV, then sign a SAC.

    Domain verify keys come from the orchestrator's local replica, which
    already holds every ES registration.
    """
    at = at or orchestrator_id
    result = ledger.query_batch(req.uav_ids(), at)
    if isinstance(result, Missing):
        return Rejection(req.task_id, result.ids)
    registry = ledger.replica(at).registry.identities
    es_keys = {i.id: i.verify_key for i in registry.values() if i.role.value == "EdgeServer"}
    path = PathPayload(
        req.task_id,
        req.hops,
        {uid: ident.seal_key for uid, ident in result.identities.items()},
        es_keys,
    )
    first = result.identities[req.hops[0].uav_id]
    sealed = crypto.seal(first.seal_key, path.encode(), ephemeral_seed)
    unsigned = SecureAuthorizationCredential(req.task_id, orchestrator_id, now, now + sac_ttl, sealed)
    sig = crypto.sign(signing_key, unsigned.signed_bytes(), orchestrator_id)
    return SecureAuthorizationCredential(req.task_id, orchestrator_id, now, now + sac_ttl, sealed, sig)


# phase 2 -------------------------------------------------------------------

def verify_sac(
    uav_id: str,
    seal_secret: KeyPair | bytes,
    sac: SecureAuthorizationCredential,
    orch_verify_key: bytes | None,
    now: int,
) -> tuple[ExecutionAuthorization, PathPayload]:
    if orch_verify_key is None or sac.orch_signature is None or \
            not crypto.verify(orch_verify_key, sac.signed_bytes(), sac.orch_signature):
        raise SignatureInvalid(f"SAC for {sac.task_id} fails signature check")
    try:
        path = PathPayload.decode(crypto.open_box(seal_secret, sac.sealed_path))
    except (crypto.OpenFailure, ValueError, KeyError, TypeError):
        raise SealFailure(f"SAC path for {sac.task_id} does not open") from None
    if path.task_id != sac.task_id or not path.hops or path.hops[0].uav_id != uav_id:
        raise WrongRecipient(f"{uav_id} is not the initiating node of {sac.task_id}")
    if not (sac.not_before <= now <= sac.not_after):
        raise Expired(f"SAC for {sac.task_id} outside [{sac.not_before}, {sac.not_after}] at {now}")
    return ExecutionAuthorization(sac.task_id, uav_id, 0, now), path


# phase 3 -------------------------------------------------------------------

def issue_hc(
    sender_uav: str,
    sender_es: str,
    es_signing_key: KeyPair | bytes,
    next_uav: str,
    hop_index: int,
    sealed_body: SealedBox,
    sender_auth: ExecutionAuthorization | None,
    now: int,
) -> HandoverCredential:
    if sender_auth is None or sender_auth.uav_id != sender_uav or sender_auth.hop_index != hop_index - 1:
        raise ProtocolViolation(f"{sender_uav} holds no authorization for hop {hop_index - 1}")
    unsigned = HandoverCredential(sender_auth.task_id, next_uav, now, hop_index, sender_es, sealed_body)
    sig = crypto.sign(es_signing_key, unsigned.signed_bytes(), sender_es)
    return HandoverCredential(sender_auth.task_id, next_uav, now, hop_index, sender_es, sealed_body, sig)


def verify_hc(
    target_uav: str,
    seal_secret: KeyPair | bytes,
    hc: HandoverCredential,
    sender_verify_key: bytes | None,
    now: int,
    delta: int,
) -> tuple[ExecutionAuthorization, RelayLayer]:
    if sender_verify_key is None or hc.domain_signature is None or \
            not crypto.verify(sender_verify_key, hc.signed_bytes(), hc.domain_signature):
        raise SignatureInvalid(f"HC {hc.task_id}#{hc.hop_index} fails domain signature")
    try:
        layer = RelayLayer.decode(crypto.open_box(seal_secret, hc.sealed_body))
    except (crypto.OpenFailure, ValueError, KeyError, TypeError):
        raise SealFailure(f"HC {hc.task_id}#{hc.hop_index} body does not open") from None
    if hc.next_recipient_id != target_uav or layer.uav_id != target_uav or \
            layer.task_id != hc.task_id or layer.hop_index != hc.hop_index:
        raise WrongRecipient(f"HC {hc.task_id}#{hc.hop_index} is not addressed to {target_uav}")
    if abs(now - hc.issued_at) > delta:
        raise Stale(f"HC {hc.task_id}#{hc.hop_index} issued at {hc.issued_at}, now {now}")
    return ExecutionAuthorization(hc.task_id, target_uav, hc.hop_index, now), layer


# phase 4 -------------------------------------------------------------------

class AuditOp:
    TASK_START = "TaskStart"
    HANDOVER = "Handover"
    TASK_END = "TaskEnd"
    ABORTED = "Aborted"


@dataclass(frozen=True)
class AuditEntry:
    task_id: str
    op: str
    hop_index: int
    nodes: tuple[str, ...]
    at: int
    detail: str = ""

    def to_dict(self, seq: int) -> dict:
        return {
            "task_id": self.task_id,
            "op": self.op,
            "seq": seq,
            "hop_index": self.hop_index,
            "nodes": list(self.nodes),
            "at": self.at,
            "detail": self.detail,
        }


def audit_records(trail: Sequence[AuditEntry], now: int) -> list[LedgerRecord]:
    return [LedgerRecord.make(RecordKind.AUDIT_EVENT, e.to_dict(i), now) for i, e in enumerate(trail)]


def finalize_audit(trail: Sequence[AuditEntry], ledger: ConsortiumLedger, via: str) -> list:
    """Commit a task's audit trail and return one receipt per record.

    The trail goes through consensus as a single request, so every record
    shares the receipt of that request.
    """
    if not trail:
        return []
    ends = {AuditOp.TASK_END, AuditOp.ABORTED}
    if trail[-1].op not in ends:
        raise ProtocolViolation("audit trail must end with TaskEnd or Aborted")
    records = audit_records(trail, ledger.kernel.now)
    receipt = ledger.commit(records, via)
    return [receipt] * len(records)


@dataclass
class TaskTimeline:
    task_id: str
    events: list[dict] = field(default_factory=list)

    def ops(self) -> list[str]:
        return [e["op"] for e in self.events]


def reconstruct_timelines(blocks: Iterable[Any]) -> dict[str, TaskTimeline]:
    """Replay audit records into per-task ordered timelines."""
    out: dict[str, TaskTimeline] = {}
    for block in blocks:
        for rec in block.records:
            if rec.kind is not RecordKind.AUDIT_EVENT:
                continue
            body = rec.body()
            tl = out.setdefault(body["task_id"], TaskTimeline(body["task_id"]))
            tl.events.append(body)
    for tl in out.values():
        tl.events.sort(key=lambda e: e["seq"])
    return dict(sorted(out.items()))
