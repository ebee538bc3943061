"""Replicated hash-chained ledger kept by the edge servers.

Ordering uses a simplified PBFT: static membership, crash/silent faults,
pre-prepare / prepare / commit with quorum ``ceil((n + f + 1) / 2)`` (which
is 2f+1 when n = 3f+1), and round-robin primary rotation on timeout.  View
changes carry the prepared batches themselves but no signed certificates.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from functools import cached_property
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Sequence

from .crypto import ZERO_DIGEST, digest
from .model import NodeIdentity, Status
from .simnet import Kernel, Timer

log = logging.getLogger(__name__)

LEDGER_HEADER = "#format=uavtrust-ledger/1"


def canonical(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


class LedgerError(Exception):
    pass


class ConsensusFailure(LedgerError):
    pass


class ReplicaUnavailable(LedgerError):
    pass


class AlreadyRegistered(LedgerError):
    pass


class UnknownIdentity(LedgerError):
    pass


class RecordKind(str, Enum):
    IDENTITY_REGISTRATION = "IdentityRegistration"
    IDENTITY_REVOCATION = "IdentityRevocation"
    AUDIT_EVENT = "AuditEvent"


@dataclass(frozen=True)
class LedgerRecord:
    record_id: bytes
    kind: RecordKind
    payload: bytes
    submitted_at: int

    @classmethod
    def make(cls, kind: RecordKind, body: Mapping, submitted_at: int) -> "LedgerRecord":
        payload = canonical(body)
        return cls(digest(payload), kind, payload, int(submitted_at))

    def body(self) -> dict:
        return json.loads(self.payload)

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id.hex(),
            "kind": self.kind.value,
            "payload": self.payload.hex(),
            "submitted_at": self.submitted_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LedgerRecord":
        return cls(_unhex(d["record_id"]), RecordKind(d["kind"]), _unhex(d["payload"]), int(d["submitted_at"]))


def registration(identity: NodeIdentity, at: int = 0) -> LedgerRecord:
    return LedgerRecord.make(RecordKind.IDENTITY_REGISTRATION, identity.to_dict(), at)


def revocation(node_id: str, at: int = 0) -> LedgerRecord:
    return LedgerRecord.make(RecordKind.IDENTITY_REVOCATION, {"id": node_id}, at)


_HEX = re.compile(r"^(?:[0-9a-f]{2})*$")


def _unhex(s: str) -> bytes:
    if not isinstance(s, str) or not _HEX.match(s):
        raise ValueError("expected lowercase hex")
    return bytes.fromhex(s)


@dataclass(frozen=True)
class LedgerBlock:
    height: int
    prev_hash: bytes
    records: tuple[LedgerRecord, ...]
    committed_at: int

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash.hex(),
            "records": [r.to_dict() for r in self.records],
            "committed_at": self.committed_at,
        }

    def serialize(self) -> bytes:
        return self._serialized

    @cached_property
    def _serialized(self) -> bytes:
        return canonical(self.to_dict())

    @cached_property
    def _hash(self) -> bytes:
        return digest(self._serialized)

    def hash(self) -> bytes:
        return self._hash

    @classmethod
    def from_dict(cls, d: Mapping) -> "LedgerBlock":
        return cls(
            int(d["height"]),
            _unhex(d["prev_hash"]),
            tuple(LedgerRecord.from_dict(r) for r in d["records"]),
            int(d["committed_at"]),
        )


def genesis(records: Sequence[LedgerRecord] = ()) -> LedgerBlock:
    return LedgerBlock(0, ZERO_DIGEST, tuple(records), 0)


@dataclass(frozen=True)
class BrokenAt:
    height: int


@dataclass(frozen=True)
class CommitReceipt:
    height: int
    commit_time: int


@dataclass(frozen=True)
class AllRegistered:
    identities: dict[str, NodeIdentity]


@dataclass(frozen=True)
class Missing:
    ids: frozenset[str]


class Registry:
    """Identity status replayed from committed blocks."""

    def __init__(self):
        self.identities: dict[str, NodeIdentity] = {}

    def apply(self, block: LedgerBlock) -> None:
        for rec in block.records:
            if rec.kind is RecordKind.IDENTITY_REGISTRATION:
                ident = NodeIdentity.from_dict(rec.body())
                self.identities[ident.id] = ident
            elif rec.kind is RecordKind.IDENTITY_REVOCATION:
                nid = rec.body()["id"]
                old = self.identities.get(nid)
                if old is not None:
                    self.identities[nid] = NodeIdentity(
                        old.id, old.role, old.domain_id, old.verify_key, old.seal_key, Status.REVOKED
                    )

    def is_registered(self, node_id: str) -> bool:
        ident = self.identities.get(node_id)
        return ident is not None and ident.status is Status.REGISTERED

    def query(self, ids: Iterable[str]) -> AllRegistered | Missing:
        ids = set(ids)
        missing = {i for i in ids if not self.is_registered(i)}
        if missing:
            return Missing(frozenset(missing))
        return AllRegistered({i: self.identities[i] for i in sorted(ids)})


@dataclass
class ReplicaState:
    es_id: str
    chain: list[LedgerBlock] = field(default_factory=list)
    view: int = 0
    pending: dict[str, "Request"] = field(default_factory=dict)
    head_hash: bytes | None = None

    def height(self) -> int:
        return len(self.chain) - 1

    def append(self, block: LedgerBlock) -> None:
        self.chain.append(block)
        self.head_hash = block.hash()


def verify_chain(replica: ReplicaState | Sequence[LedgerBlock], head_hash: bytes | None = None) -> BrokenAt | None:
    """Check every prev_hash link; return the first height whose link fails.

    A head anchor, when known, protects the newest block: a mismatch there is
    reported as ``BrokenAt(len(chain))``.
    """
    if isinstance(replica, ReplicaState):
        chain, head_hash = replica.chain, replica.head_hash
    else:
        chain = list(replica)
    hashes = [b.hash() for b in chain]
    return _check_links(chain, hashes, head_hash)


def _check_links(chain: Sequence[LedgerBlock], hashes: Sequence[bytes], head_hash: bytes | None) -> BrokenAt | None:
    for h, block in enumerate(chain):
        if block.height != h:
            return BrokenAt(h)
        expected = ZERO_DIGEST if h == 0 else hashes[h - 1]
        if block.prev_hash != expected:
            return BrokenAt(h)
    if head_hash is not None and chain and hashes[-1] != head_hash:
        return BrokenAt(len(chain))
    return None


# dump format ---------------------------------------------------------------

def dump_header(height: int, head: bytes) -> str:
    return f"{LEDGER_HEADER} height={height} head={head.hex()}"


def dump_chain(replica: ReplicaState) -> str:
    head = replica.head_hash or ZERO_DIGEST
    lines = [dump_header(replica.height(), head)]
    lines += [b.serialize().decode() for b in replica.chain]
    return "\n".join(lines) + "\n"


@dataclass
class LoadedDump:
    blocks: list[LedgerBlock]
    head_hash: bytes | None
    broken: BrokenAt | None


_HEADER_RE = re.compile(r"^#format=uavtrust-ledger/1 height=(0|[1-9][0-9]*) head=([0-9a-f]{64})$")


def load_dump(data: str | bytes) -> LoadedDump:
    """Parse a ledger dump and verify it byte for byte.

    Every block line must be the canonical serialization of its block, and
    the header must restate the height and head hash, so any altered byte
    is reported.  An unreadable header raises ``LedgerError``.
    """
    raw = data.encode() if isinstance(data, str) else bytes(data)
    if not raw.endswith(b"\n"):
        raise LedgerError("ledger dump is truncated")
    lines = raw[:-1].split(b"\n")
    try:
        m = _HEADER_RE.match(lines[0].decode("ascii"))
    except UnicodeDecodeError:
        m = None
    if m is None:
        raise LedgerError("missing or malformed ledger dump header")
    height, head = int(m.group(1)), bytes.fromhex(m.group(2))
    blocks: list[LedgerBlock] = []
    hashes: list[bytes] = []
    for h, line in enumerate(lines[1:]):
        try:
            block = LedgerBlock.from_dict(json.loads(line.decode("utf-8")))
        except (ValueError, KeyError, TypeError):
            return LoadedDump(blocks, head, BrokenAt(h))
        if block.serialize() != line:
            return LoadedDump(blocks, head, BrokenAt(h))
        blocks.append(block)
        hashes.append(digest(line))
    broken = _check_links(blocks, hashes, head)
    if broken is None and (not blocks or height != len(blocks) - 1):
        broken = BrokenAt(len(blocks))
    return LoadedDump(blocks, head, broken)


# consensus messages --------------------------------------------------------

@dataclass(frozen=True)
class Request:
    req_id: str
    records: tuple[LedgerRecord, ...]
    via: str


@dataclass(frozen=True)
class Batch:
    seq: int
    requests: tuple[Request, ...]
    proposed_at: int

    def digest(self) -> bytes:
        return self._digest

    @cached_property
    def _digest(self) -> bytes:
        head = canonical([self.seq, self.proposed_at, [r.req_id for r in self.requests]])
        return digest(head + b"".join(rec.record_id for r in self.requests for rec in r.records))


@dataclass(frozen=True)
class PrePrepare:
    view: int
    batch: Batch


@dataclass(frozen=True)
class Prepare:
    view: int
    seq: int
    digest: bytes


@dataclass(frozen=True)
class CommitMsg:
    view: int
    seq: int
    digest: bytes


@dataclass(frozen=True)
class ViewChange:
    new_view: int
    executed: int
    prepared: tuple[tuple[int, Batch], ...]  # (view prepared in, batch)


@dataclass(frozen=True)
class NewView:
    view: int
    base: int
    batches: tuple[Batch, ...]


@dataclass(frozen=True)
class StateRequest:
    from_height: int


@dataclass(frozen=True)
class StateResponse:
    blocks: tuple[LedgerBlock, ...]
    view: int


@dataclass
class _Slot:
    batch: Batch | None = None
    view: int = -1
    prepares: set = field(default_factory=set)
    commits: set = field(default_factory=set)
    prepared: bool = False
    committed: bool = False
    sent_commit: bool = False


class Replica:
    """One ES's ledger replica; message handling runs on the shared kernel."""

    def __init__(self, ledger: "ConsortiumLedger", es_id: str, genesis_block: LedgerBlock):
        self.ledger = ledger
        self.kernel: Kernel = ledger.kernel
        self.es_id = es_id
        self.state = ReplicaState(es_id)
        self.state.append(genesis_block)
        self.registry = Registry()
        self.registry.apply(genesis_block)
        self._reset_volatile()

    def _reset_volatile(self) -> None:
        self.view = self.state.view
        self.slots: dict[tuple[int, int], _Slot] = {}
        self.committed_batches: dict[int, Batch] = {}
        self.prepared_batches: dict[int, tuple[int, Batch]] = {}
        self.executed_reqs: set[str] = set()
        self.proposed: set[str] = set()
        self.queue: list[str] = []
        self.next_seq = self.state.height() + 1
        self.vc_timer: int | None = None
        self.batch_timer: int | None = None
        self.vc_votes: dict[int, set[str]] = {}
        self.vc_msgs: dict[int, dict[str, ViewChange]] = {}
        self.sent_vc: int = self.view
        self.in_view_change = False
        self.waiters: dict[str, list[Callable]] = {}
        self.timeouts: dict[str, int] = {}
        self.syncing = False

    # helpers ------------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.ledger.es_ids)

    def primary_of(self, view: int) -> str:
        return self.ledger.es_ids[view % self.n]

    def is_primary(self) -> bool:
        return self.primary_of(self.view) == self.es_id and not self.in_view_change

    def _broadcast(self, msg: Any, delay: int = 0) -> None:
        for other in self.ledger.es_ids:
            if other != self.es_id:
                self.kernel.send(self.es_id, other, msg, delay)

    def _phase_cost(self) -> int:
        return self.kernel.latency.cost("consensus_phase")

    # client side --------------------------------------------------------
    def submit(self, req: Request, on_done: Callable | None) -> None:
        if on_done is not None:
            self.waiters.setdefault(req.req_id, []).append(on_done)
        self.timeouts[req.req_id] = 0
        self._broadcast(req)
        self._on_request(req)

    # message dispatch ---------------------------------------------------
    def handle(self, src: str, msg: Any) -> None:
        if isinstance(msg, Request):
            self._on_request(msg)
        elif isinstance(msg, PrePrepare):
            self._on_preprepare(src, msg)
        elif isinstance(msg, Prepare):
            self._on_prepare(src, msg)
        elif isinstance(msg, CommitMsg):
            self._on_commit(src, msg)
        elif isinstance(msg, ViewChange):
            self._on_view_change(src, msg)
        elif isinstance(msg, NewView):
            self._on_new_view(src, msg)
        elif isinstance(msg, StateRequest):
            self._on_state_request(src, msg)
        elif isinstance(msg, StateResponse):
            self._on_state_response(src, msg)
        else:
            raise LedgerError(f"unexpected ledger message {msg!r}")

    def handle_timer(self, timer: Timer) -> None:
        if timer.kind == "ledger.batch":
            self.batch_timer = None
            self._propose()
        elif timer.kind == "ledger.view":
            if timer.data == self.vc_timer_token:
                self.vc_timer = None
                self._on_view_timeout()

    # request intake -----------------------------------------------------
    def _on_request(self, req: Request) -> None:
        if req.req_id in self.executed_reqs or req.req_id in self.state.pending:
            return
        self.state.pending[req.req_id] = req
        self._arm_view_timer()
        if self.is_primary():
            self._enqueue(req.req_id)

    def _enqueue(self, req_id: str) -> None:
        if req_id in self.proposed or req_id in self.executed_reqs:
            return
        self.queue.append(req_id)
        queued = sum(len(self.state.pending[r].records) for r in self.queue if r in self.state.pending)
        if queued >= self.ledger.batch_size or self.ledger.batch_timeout_ms == 0:
            self._propose()
        elif self.batch_timer is None:
            self.batch_timer = self.kernel.timer(self.ledger.batch_timeout_ms, self.es_id, "ledger.batch")

    def _propose(self) -> None:
        if not self.is_primary():
            return
        self.kernel.cancel_quietly(self.batch_timer)
        self.batch_timer = None
        while self.queue:
            reqs, size = [], 0
            while self.queue and size < self.ledger.batch_size:
                rid = self.queue.pop(0)
                req = self.state.pending.get(rid)
                if req is None or rid in self.proposed or rid in self.executed_reqs:
                    continue
                reqs.append(req)
                size += len(req.records)
                self.proposed.add(rid)
            if not reqs:
                break
            batch = Batch(self.next_seq, tuple(reqs), self.kernel.now)
            self.next_seq += 1
            self._issue_preprepare(batch)
            if self.ledger.batch_timeout_ms > 0 and size < self.ledger.batch_size:
                break

    def _issue_preprepare(self, batch: Batch) -> None:
        slot = self._slot(self.view, batch.seq)
        slot.batch = batch
        slot.view = self.view
        self._broadcast(PrePrepare(self.view, batch), self._phase_cost())
        self.kernel.trace(self.es_id, "ledger.preprepare", f"view={self.view} seq={batch.seq} reqs={len(batch.requests)}")
        self._check_prepared(self.view, batch.seq)

    # normal case --------------------------------------------------------
    def _slot(self, view: int, seq: int) -> _Slot:
        key = (view, seq)
        slot = self.slots.get(key)
        if slot is None:
            slot = self.slots[key] = _Slot()
        return slot

    def _on_preprepare(self, src: str, msg: PrePrepare) -> None:
        if msg.view != self.view or self.in_view_change or src != self.primary_of(msg.view):
            return
        seq = msg.batch.seq
        if seq <= self.state.height():
            return
        slot = self._slot(msg.view, seq)
        if slot.batch is not None:
            return
        slot.batch = msg.batch
        slot.view = msg.view
        for req in msg.batch.requests:
            if req.req_id not in self.state.pending and req.req_id not in self.executed_reqs:
                self.state.pending[req.req_id] = req
        self._broadcast(Prepare(msg.view, seq, msg.batch.digest()), self._phase_cost())
        slot.prepares.add((self.es_id, msg.batch.digest()))
        self._check_prepared(msg.view, seq)

    def _on_prepare(self, src: str, msg: Prepare) -> None:
        if msg.view < self.view:
            return
        slot = self._slot(msg.view, msg.seq)
        slot.prepares.add((src, msg.digest))
        self._check_prepared(msg.view, msg.seq)

    def _on_commit(self, src: str, msg: CommitMsg) -> None:
        if msg.view < self.view:
            return
        slot = self._slot(msg.view, msg.seq)
        slot.commits.add((src, msg.digest))
        self._check_committed(msg.view, msg.seq)

    def _check_prepared(self, view: int, seq: int) -> None:
        slot = self.slots.get((view, seq))
        if slot is None or slot.batch is None or slot.prepared or view != self.view:
            return
        d = slot.batch.digest()
        primary = self.primary_of(view)
        votes = {s for s, dg in slot.prepares if dg == d and s != primary}
        if len(votes) + 1 < self.ledger.quorum:
            return
        slot.prepared = True
        self.prepared_batches[seq] = (view, slot.batch)
        slot.commits.add((self.es_id, d))
        self._broadcast(CommitMsg(view, seq, d), self._phase_cost())
        slot.sent_commit = True
        self._check_committed(view, seq)

    def _check_committed(self, view: int, seq: int) -> None:
        slot = self.slots.get((view, seq))
        if slot is None or slot.batch is None or not slot.prepared or slot.committed:
            return
        d = slot.batch.digest()
        if len({s for s, dg in slot.commits if dg == d}) < self.ledger.quorum:
            return
        slot.committed = True
        self.committed_batches[seq] = slot.batch
        self._execute_ready()

    def _execute_ready(self) -> None:
        progressed = False
        while True:
            seq = self.state.height() + 1
            batch = self.committed_batches.pop(seq, None)
            if batch is None:
                break
            self._apply_batch(batch)
            progressed = True
        if progressed:
            self._rearm_after_progress()

    def _apply_batch(self, batch: Batch) -> None:
        records = tuple(rec for req in batch.requests if req.req_id not in self.executed_reqs for rec in req.records)
        block = LedgerBlock(batch.seq, self.state.head_hash, records, batch.proposed_at)
        self._append_block(block, batch.requests)

    def _append_block(self, block: LedgerBlock, requests: Iterable[Request]) -> None:
        self.state.append(block)
        self.registry.apply(block)
        self.prepared_batches.pop(block.height, None)
        for key in [k for k in self.slots if k[1] <= block.height]:
            del self.slots[key]
        self.kernel.trace(self.es_id, "ledger.commit", f"height={block.height} records={len(block.records)}")
        self.ledger._on_block(self, block)
        for req in requests:
            rid = req.req_id
            self.executed_reqs.add(rid)
            self.state.pending.pop(rid, None)
            self.timeouts.pop(rid, None)
            for cb in self.waiters.pop(rid, []):
                cb(CommitReceipt(block.height, self.kernel.now))
        if self.next_seq <= block.height:
            self.next_seq = block.height + 1

    # view change --------------------------------------------------------
    vc_timer_token = 0

    def _arm_view_timer(self) -> None:
        if self.vc_timer is None and self.state.pending:
            self.vc_timer_token += 1
            self.vc_timer = self.kernel.timer(self.ledger.view_timeout_ms, self.es_id, "ledger.view", self.vc_timer_token)

    def _rearm_after_progress(self) -> None:
        self.kernel.cancel_quietly(self.vc_timer)
        self.vc_timer = None
        self._arm_view_timer()

    def _on_view_timeout(self) -> None:
        if not self.state.pending:
            return
        failed = []
        for rid in self.state.pending:
            self.timeouts[rid] = self.timeouts.get(rid, 0) + 1
            if self.timeouts[rid] > self.n:
                failed.append(rid)
        # after a full rotation without quorum the request is abandoned, so a
        # replica cut off from its peers stops rotating and the run can drain
        for rid in failed:
            self.timeouts.pop(rid, None)
            self.state.pending.pop(rid, None)
            for cb in self.waiters.pop(rid, []):
                cb(ConsensusFailure(f"request {rid} not committed after {self.n} view rotations"))
        if not self.state.pending:
            return
        target = max(self.view, self.sent_vc) + 1
        self._send_view_change(target)
        self._arm_view_timer()

    def _send_view_change(self, target: int) -> None:
        if target <= self.sent_vc and self.in_view_change:
            return
        self.sent_vc = target
        self.in_view_change = True
        prepared = tuple(sorted(self.prepared_batches.items()))
        msg = ViewChange(target, self.state.height(), tuple(p for _, p in prepared))
        self.kernel.trace(self.es_id, "ledger.viewchange", f"to={target}")
        self._broadcast(msg)
        self._on_view_change(self.es_id, msg)

    def _on_view_change(self, src: str, msg: ViewChange) -> None:
        if msg.new_view <= self.view:
            return
        self.vc_msgs.setdefault(msg.new_view, {})[src] = msg
        votes = self.vc_msgs[msg.new_view]
        if len(votes) >= self.ledger.fault_budget + 1 and self.sent_vc < msg.new_view:
            self._send_view_change(msg.new_view)
            return
        if self.primary_of(msg.new_view) == self.es_id and len(votes) >= self.ledger.quorum:
            self._become_primary(msg.new_view, list(votes.values()))

    def _become_primary(self, view: int, vcs: list[ViewChange]) -> None:
        if self.view >= view:
            return
        base = max(vc.executed for vc in vcs)
        low = min(vc.executed for vc in vcs)
        chosen: dict[int, tuple[int, Batch]] = {}
        for vc in vcs:
            for pview, batch in vc.prepared:
                if batch.seq > low and (batch.seq not in chosen or chosen[batch.seq][0] < pview):
                    chosen[batch.seq] = (pview, batch)
        top = max([base, *chosen.keys()])
        batches = []
        for seq in range(low + 1, top + 1):
            if seq in chosen:
                old = chosen[seq][1]
                batches.append(Batch(seq, old.requests, old.proposed_at))
            elif seq > base:
                batches.append(Batch(seq, (), self.kernel.now))
        nv = NewView(view, base, tuple(batches))
        self.kernel.trace(self.es_id, "ledger.newview", f"view={view} base={base} reproposed={len(batches)}")
        self._broadcast(nv)
        self._on_new_view(self.es_id, nv)

    def _on_new_view(self, src: str, msg: NewView) -> None:
        if msg.view <= self.view or src != self.primary_of(msg.view):
            return
        self.view = msg.view
        self.state.view = msg.view
        self.in_view_change = False
        self.sent_vc = max(self.sent_vc, msg.view)
        self.slots = {k: s for k, s in self.slots.items() if k[0] >= msg.view}
        self.vc_msgs = {v: m for v, m in self.vc_msgs.items() if v > msg.view}
        self.proposed = set()
        self.queue = []
        self.kernel.cancel_quietly(self.batch_timer)
        self.batch_timer = None
        if self.state.height() < msg.base and not self.syncing:
            self._request_state()
        primary = self.primary_of(msg.view)
        covered = set()
        for batch in msg.batches:
            covered.update(r.req_id for r in batch.requests)
            if batch.seq <= self.state.height():
                continue
            slot = self._slot(msg.view, batch.seq)
            slot.batch = batch
            slot.view = msg.view
            for req in batch.requests:
                if req.req_id not in self.executed_reqs:
                    self.state.pending.setdefault(req.req_id, req)
            if self.es_id != primary:
                self._broadcast(Prepare(msg.view, batch.seq, batch.digest()), self._phase_cost())
                slot.prepares.add((self.es_id, batch.digest()))
            self._check_prepared(msg.view, batch.seq)
        if self.es_id == primary:
            self.next_seq = max([self.state.height(), msg.base, *(b.seq for b in msg.batches)]) + 1
            self.proposed = set(covered)
            for rid in sorted(self.state.pending, key=lambda r: self.state.pending[r].req_id):
                self._enqueue(rid)
        self._rearm_after_progress()

    # state transfer -----------------------------------------------------
    def _request_state(self) -> None:
        self.syncing = True
        self._broadcast(StateRequest(self.state.height() + 1))

    def _on_state_request(self, src: str, msg: StateRequest) -> None:
        blocks = tuple(self.state.chain[msg.from_height:])
        self.kernel.send(self.es_id, src, StateResponse(blocks, self.view))

    def _on_state_response(self, src: str, msg: StateResponse) -> None:
        applied = False
        for block in msg.blocks:
            if block.height != self.state.height() + 1 or block.prev_hash != self.state.head_hash:
                continue
            reqs = [r for r in self._requests_for(block)]
            self._append_block(block, reqs)
            applied = True
        if msg.view > self.view and not self.in_view_change:
            self.view = msg.view
            self.state.view = msg.view
            self.sent_vc = max(self.sent_vc, msg.view)
        self.syncing = False
        if applied:
            self._execute_ready()
            self._rearm_after_progress()

    def _requests_for(self, block: LedgerBlock) -> list[Request]:
        ids = {r.record_id for r in block.records}
        return [req for req in self.state.pending.values() if any(rec.record_id in ids for rec in req.records)]

    # failures -----------------------------------------------------------
    def on_crash(self) -> None:
        self.kernel.cancel_quietly(self.vc_timer)
        self.kernel.cancel_quietly(self.batch_timer)

    def on_recover(self) -> None:
        pending_waiters = self.waiters
        self.state.pending = {}
        self._reset_volatile()
        self.waiters = pending_waiters
        self._request_state()


class _LedgerHost:
    """Kernel node that only hosts a replica (standalone ledger use)."""

    def __init__(self, ledger: "ConsortiumLedger", es_id: str):
        self.ledger = ledger
        self.es_id = es_id

    def on_message(self, src, msg):
        self.ledger.replicas[self.es_id].handle(src, msg)

    def on_timer(self, timer):
        self.ledger.replicas[self.es_id].handle_timer(timer)


class ConsortiumLedger:
    """The ES consortium's replicated ledger on a simulation kernel."""

    def __init__(
        self,
        kernel: Kernel,
        es_ids: Iterable[str],
        genesis_records: Sequence[LedgerRecord] = (),
        batch_size: int = 1,
        batch_timeout_ms: int = 0,
        view_timeout_ms: int | None = None,
        fault_budget: int | None = None,
        host_nodes: bool = False,
    ):
        self.kernel = kernel
        self.es_ids = sorted(es_ids)
        if not self.es_ids:
            raise LedgerError("ledger needs at least one replica")
        n = len(self.es_ids)
        self.fault_budget = (n - 1) // 3 if fault_budget is None else fault_budget
        if n < 3 * self.fault_budget + 1:
            raise LedgerError(f"n={n} replicas cannot tolerate f={self.fault_budget}")
        self.quorum = -(-(n + self.fault_budget + 1) // 2)
        self.batch_size = max(1, int(batch_size))
        self.batch_timeout_ms = int(batch_timeout_ms)
        if view_timeout_ms is None:
            topo = kernel.topology
            span = topo.diameter_latency(self.es_ids) if topo is not None else kernel.latency.es_link_ms
            view_timeout_ms = 10 * max(span, kernel.latency.es_link_ms)
        self.view_timeout_ms = int(view_timeout_ms)
        g = genesis(genesis_records)
        self.replicas = {e: Replica(self, e, g) for e in self.es_ids}
        self._req_counter = 0
        self.block_listeners: list[Callable[[Replica, LedgerBlock], None]] = []
        if host_nodes:
            from .model import Role
            for e in self.es_ids:
                kernel.add_node(e, _LedgerHost(self, e), Role.EDGE_SERVER)
        kernel.crash_hooks.append(self._on_node_event)

    def _on_node_event(self, node_id: str, action: str) -> None:
        rep = self.replicas.get(node_id)
        if rep is None:
            return
        if action == "crash":
            rep.on_crash()
        else:
            rep.on_recover()

    def _on_block(self, replica: Replica, block: LedgerBlock) -> None:
        for listener in self.block_listeners:
            listener(replica, block)

    def replica(self, es_id: str) -> Replica:
        return self.replicas[es_id]

    def _live_replica(self, es_id: str) -> Replica:
        rep = self.replicas.get(es_id)
        if rep is None:
            raise LedgerError(f"{es_id} is not a ledger replica")
        if not self.kernel.is_live(es_id):
            raise ReplicaUnavailable(f"replica {es_id} is down")
        return rep

    # async API ----------------------------------------------------------
    def submit(self, records: LedgerRecord | Sequence[LedgerRecord], via: str,
               on_done: Callable[[CommitReceipt | ConsensusFailure], None] | None = None) -> str:
        """Order ``records`` through consensus; ``on_done`` gets a receipt or a failure."""
        rep = self._live_replica(via)
        if isinstance(records, LedgerRecord):
            records = (records,)
        self._req_counter += 1
        req = Request(f"{via}#{self._req_counter}", tuple(records), via)
        rep.submit(req, on_done)
        return req.req_id

    def register_identity(self, identity: NodeIdentity, via: str, on_done=None) -> str:
        if self._live_replica(via).registry.is_registered(identity.id):
            raise AlreadyRegistered(identity.id)
        return self.submit(registration(identity, self.kernel.now), via, on_done)

    def revoke_identity(self, node_id: str, via: str, on_done=None) -> str:
        if not self._live_replica(via).registry.is_registered(node_id):
            raise UnknownIdentity(node_id)
        return self.submit(revocation(node_id, self.kernel.now), via, on_done)

    def query_batch(self, ids: Iterable[str], at: str) -> AllRegistered | Missing:
        """Atomic status check of every id against ``at``'s committed prefix."""
        return self._live_replica(at).registry.query(ids)

    # synchronous helpers (drive the kernel until the result is known) ----
    def commit(self, records, via: str) -> CommitReceipt:
        box: list = []
        self.submit(records, via, box.append)
        return self._wait(box)

    def commit_registration(self, identity: NodeIdentity, via: str) -> CommitReceipt:
        box: list = []
        self.register_identity(identity, via, box.append)
        return self._wait(box)

    def commit_revocation(self, node_id: str, via: str) -> CommitReceipt:
        box: list = []
        self.revoke_identity(node_id, via, box.append)
        return self._wait(box)

    def _wait(self, box: list) -> CommitReceipt:
        while not box and self.kernel.step():
            pass
        if not box:
            raise ConsensusFailure("simulation drained before commit")
        if isinstance(box[0], ConsensusFailure):
            raise box[0]
        return box[0]

    def dump(self, es_id: str) -> str:
        return dump_chain(self.replicas[es_id].state)
