"""A simulated deployment: ES and UAV role machines wired to kernel and ledger.

One ``World`` runs one scheme.  Task initiation is the arrival of the
request at the ES of its first hop's domain (the ingress).  Cross-domain
traffic between a domain's ES and a foreign UAV always rides the ES
backbone: the sending ES hands the credential to the recipient's ES, which
delivers it over the intra-domain link.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

from . import crypto
from .baselines import TA_ID, AuthRequest, Deny, Grant, SchemeId, TaNode, TaTask, auth_request_bytes
from .crypto import KeyKind, SealedBox, derive_seed, keygen
from .election import (
    ElectionHost,
    ElectionOutcome,
    ElectionParams,
    ElectMsg,
    NoCandidates,
    ScoreMsg,
    filter_candidates,
    window_for,
)
from .errors import ConfigError
from .ledger import CommitReceipt, ConsortiumLedger, ConsensusFailure, registration
from .model import DomainDescriptor, EsTopology, NodeIdentity, Role, SfcRequest, validate_request
from .protocol import (
    AuditEntry,
    AuditOp,
    AuthError,
    ExecutionAuthorization,
    HandoverCredential,
    PathPayload,
    ProtocolViolation,
    Rejection,
    SecureAuthorizationCredential,
    audit_records,
    build_layers,
    issue_hc,
    pre_verify_and_issue,
    verify_hc,
    verify_sac,
)
from .simnet import Kernel, LatencyModel, Server, Timer

log = logging.getLogger(__name__)

LEDGER_MESSAGES = ("Request", "PrePrepare", "Prepare", "CommitMsg", "ViewChange", "NewView",
                   "StateRequest", "StateResponse")


@dataclass
class WorldParams:
    latency: LatencyModel = field(default_factory=LatencyModel)
    election: ElectionParams = field(default_factory=ElectionParams)
    sac_ttl_ms: int = 60_000
    delta_ms: int | None = None  # None: derived from the latency model
    task_timeout_ms: int | None = None  # None: sac_ttl_ms
    batch_size: int = 1
    batch_timeout_ms: int = 0
    view_timeout_ms: int | None = None
    fixed_orchestrator: str | None = None  # None: smallest ES id
    per_hop_es_check: bool = False


# metrics ---------------------------------------------------------------------

@dataclass
class TaskResult:
    task_id: str
    scheme: str
    hops: int
    initiated_at: int | None = None
    status: str = "pending"  # pending | completed | aborted
    reason: str = ""
    abort_hop: int | None = None
    orchestrator: str | None = None
    elections: int = 0
    auth_times: dict[int, int] = field(default_factory=dict)
    elected_at: int | None = None
    sac_issued_at: int | None = None
    completed_at: int | None = None
    audit_committed_at: int | None = None

    @property
    def latency_ms(self) -> int | None:
        if self.status != "completed" or self.initiated_at is None:
            return None
        return self.completed_at - self.initiated_at


class Tracker:
    """Simulation-side observer; protocol nodes report to it, never read it."""

    def __init__(self, kernel: Kernel, scheme: SchemeId):
        self.kernel = kernel
        self.scheme = scheme
        self.tasks: dict[str, TaskResult] = {}
        self.violations: list[str] = []
        self.authorizations: list[ExecutionAuthorization] = []
        self.listeners: list = []  # called with the TaskResult once it completes or aborts

    def _settled(self, res: TaskResult) -> None:
        for fn in self.listeners:
            fn(res)

    def get(self, req: SfcRequest) -> TaskResult:
        res = self.tasks.get(req.task_id)
        if res is None:
            res = self.tasks[req.task_id] = TaskResult(req.task_id, self.scheme.value, len(req.hops))
        return res

    def initiated(self, req: SfcRequest) -> None:
        self.get(req).initiated_at = self.kernel.now

    def grant(self, task_id: str, hop: int, uav: str, total_hops: int) -> None:
        res = self.tasks[task_id]
        if res.status != "pending":
            self.violations.append(f"{task_id}: grant at hop {hop} after {res.status}")
        if res.auth_times and hop <= max(res.auth_times):
            self.violations.append(f"{task_id}: grant for hop {hop} out of order")
        res.auth_times[hop] = self.kernel.now
        self.authorizations.append(ExecutionAuthorization(task_id, uav, hop, self.kernel.now))
        if hop == total_hops - 1 and res.status == "pending":
            res.status = "completed"
            res.completed_at = self.kernel.now
            self._settled(res)

    def abort(self, task_id: str, reason: str, hop: int | None = None) -> None:
        res = self.tasks[task_id]
        if res.status == "pending":
            res.status = "aborted"
            res.reason = reason
            res.abort_hop = hop
            self.kernel.trace("tracker", "task.abort", f"task={task_id} hop={hop} reason={reason}")
            self._settled(res)

    def results(self) -> list[TaskResult]:
        return [self.tasks[k] for k in sorted(self.tasks)]


# messages --------------------------------------------------------------------

@dataclass(frozen=True)
class TaskArrival:
    req: SfcRequest


@dataclass(frozen=True)
class Declare:
    task_id: str
    attempt: int
    winner: str


@dataclass(frozen=True)
class Forward:
    req: SfcRequest
    ingress: str


@dataclass(frozen=True)
class Accept:
    task_id: str


@dataclass(frozen=True)
class SacIssued:
    task_id: str
    orchestrator: str


@dataclass(frozen=True)
class TaskRejected:
    task_id: str


@dataclass(frozen=True)
class SacDelivery:
    sac: SecureAuthorizationCredential
    target: str
    route: tuple[str, ...]
    trail: tuple[AuditEntry, ...]
    hops: int


@dataclass(frozen=True)
class HandoverRequest:
    task_id: str
    hop_index: int
    next_uav: str
    sealed_body: SealedBox
    auth: ExecutionAuthorization
    trail: tuple[AuditEntry, ...]
    hops: int


@dataclass(frozen=True)
class HcDelivery:
    hc: HandoverCredential
    target: str
    route: tuple[str, ...]
    trail: tuple[AuditEntry, ...]
    hops: int


@dataclass(frozen=True)
class TaskReport:
    trail: tuple[AuditEntry, ...]


# nodes -----------------------------------------------------------------------

@dataclass
class _IngressTask:
    req: SfcRequest
    attempt: int = 0
    phase: str = "electing"
    timer: int | None = None


class EsNode:
    def __init__(self, world: "World", domain: DomainDescriptor):
        self.world = world
        self.kernel = world.kernel
        self.id = domain.es_id
        self.domain = domain
        self.orch = Server(self.kernel, self.id, "orchestration")
        self.election = ElectionHost(self.kernel, self.id, world.topology, world.domains,
                                     world.params.election, self._on_election)
        self.ingress: dict[str, _IngressTask] = {}

    @property
    def keys(self):
        return self.world.keys[self.id]

    def on_crash(self) -> None:
        self.orch.reset()
        self.election.reset()

    # dispatch -------------------------------------------------------------
    def on_message(self, src: str, msg: Any) -> None:
        name = type(msg).__name__
        if name in LEDGER_MESSAGES:
            self.world.ledger.replica(self.id).handle(src, msg)
        elif isinstance(msg, TaskArrival):
            self._on_arrival(msg.req)
        elif isinstance(msg, ElectMsg):
            self.election.on_elect(msg)
        elif isinstance(msg, ScoreMsg):
            self.election.on_score(msg)
        elif isinstance(msg, Declare):
            self._on_declare(msg)
        elif isinstance(msg, Forward):
            self._on_forward(src, msg)
        elif isinstance(msg, Accept):
            self._on_accept(msg)
        elif isinstance(msg, SacIssued):
            self._on_sac_issued(msg)
        elif isinstance(msg, TaskRejected):
            self._finish_ingress(msg.task_id)
        elif isinstance(msg, (SacDelivery, HcDelivery)):
            self._relay(msg)
        elif isinstance(msg, HandoverRequest):
            self.kernel.timer(self.kernel.latency.cost("sign"), self.id, "es.issue_hc", (src, msg))
        elif isinstance(msg, TaskReport):
            self._submit_audit(msg.trail)
        else:
            raise TypeError(f"{self.id}: unexpected message {name}")

    def on_timer(self, timer: Timer) -> None:
        kind = timer.kind
        if kind == "server.done":
            server, done = timer.data
            server.finish(done)
        elif kind.startswith("ledger."):
            self.world.ledger.replica(self.id).handle_timer(timer)
        elif self.election.on_timer(timer):
            pass
        elif kind == "es.issue_hc":
            self._issue_hc(*timer.data)
        elif kind == "ingress.declare":
            self._on_declare_timeout(timer.data)
        elif kind == "ingress.issue":
            self._on_issue_timeout(timer.data)
        elif kind == "ingress.accept":
            self._on_accept_timeout(timer.data)
        else:
            raise ValueError(f"{self.id}: unexpected timer {kind}")

    # ingress --------------------------------------------------------------
    def _on_arrival(self, req: SfcRequest) -> None:
        w = self.world
        w.tracker.initiated(req)
        self.kernel.trace(self.id, "task.arrive", f"task={req.task_id} hops={len(req.hops)}")
        problems = validate_request(req, w.domains)
        if problems:
            w.tracker.abort(req.task_id, "InvalidRequest")
            return
        if w.scheme is SchemeId.CENTRALIZED_TA:
            self.kernel.send(self.id, req.hops[0].uav_id, TaTask(req, 0, self.kernel.now))
            return
        state = self.ingress[req.task_id] = _IngressTask(req)
        if w.scheme is SchemeId.STATIC_CONFIG:
            f = w.fixed_orchestrator
            state.phase = "forwarded"
            self.kernel.send(self.id, f, Forward(req, self.id))
            wait = 2 * self._es_latency(self.id, f) + self._slack()
            state.timer = self.kernel.timer(wait, self.id, "ingress.accept", req.task_id)
        else:
            self._start_election(state)

    def _slack(self) -> int:
        lm = self.kernel.latency
        return 2 * max(lm.proc_costs.values()) + 1

    def _es_latency(self, a: str, b: str) -> int:
        return 0 if a == b else self.kernel.link_latency(a, b)

    def _start_election(self, state: _IngressTask) -> None:
        w = self.world
        req = state.req
        try:
            cands = sorted(filter_candidates(req, w.domains))
        except NoCandidates:
            self._abort_at_ingress(state, "NoCandidates")
            return
        window = window_for(cands, w.topology, w.params.election)
        state.phase = "electing"
        w.tracker.get(req).elections += 1
        msg = ElectMsg(req, state.attempt, self.kernel.now, window, self.id, tuple(cands))
        self.kernel.trace(self.id, "election.open",
                          f"task={req.task_id} attempt={state.attempt} window={window} candidates={','.join(cands)}")
        for es in cands:
            self.kernel.send(self.id, es, msg)
        reach = max(self._es_latency(self.id, c) for c in cands)
        state.timer = self.kernel.timer(window + reach + self._slack(), self.id, "ingress.declare",
                                        (req.task_id, state.attempt))

    def _on_election(self, rnd, outcome: ElectionOutcome) -> None:
        if outcome.winner_es != self.id:
            return
        elect = rnd.elect
        self.kernel.send(self.id, elect.ingress, Declare(elect.req.task_id, elect.attempt, self.id))
        self._orchestrate(elect.req, elect.ingress)

    def _on_declare(self, msg: Declare) -> None:
        state = self.ingress.get(msg.task_id)
        if state is None or state.phase != "electing" or msg.attempt != state.attempt:
            return
        self.kernel.cancel_quietly(state.timer)
        state.phase = "declared"
        res = self.world.tracker.tasks[msg.task_id]
        res.orchestrator = msg.winner
        res.elected_at = self.kernel.now
        state.timer = self.kernel.timer(self.world.task_timeout_ms, self.id, "ingress.issue",
                                        (msg.task_id, msg.attempt))

    def _retry_or_abort(self, state: _IngressTask, reason: str) -> None:
        if state.attempt == 0:
            state.attempt = 1
            self.kernel.trace(self.id, "election.retry", f"task={state.req.task_id} reason={reason}")
            self._start_election(state)
        else:
            self._abort_at_ingress(state, reason)

    def _on_declare_timeout(self, data) -> None:
        task_id, attempt = data
        state = self.ingress.get(task_id)
        if state is not None and state.phase == "electing" and state.attempt == attempt:
            self._retry_or_abort(state, "NoDeclaration")

    def _on_issue_timeout(self, data) -> None:
        task_id, attempt = data
        state = self.ingress.get(task_id)
        if state is not None and state.phase == "declared" and state.attempt == attempt:
            self._retry_or_abort(state, "OrchestratorLost")

    def _on_forward(self, src: str, msg: Forward) -> None:
        self.kernel.send(self.id, msg.ingress, Accept(msg.req.task_id))
        self._orchestrate(msg.req, msg.ingress)

    def _on_accept(self, msg: Accept) -> None:
        state = self.ingress.get(msg.task_id)
        if state is None or state.phase != "forwarded":
            return
        self.kernel.cancel_quietly(state.timer)
        state.phase = "declared"
        res = self.world.tracker.tasks[msg.task_id]
        res.orchestrator = self.world.fixed_orchestrator
        state.timer = self.kernel.timer(self.world.task_timeout_ms, self.id, "ingress.issue", (msg.task_id, -1))

    def _on_accept_timeout(self, task_id: str) -> None:
        state = self.ingress.get(task_id)
        if state is not None and state.phase == "forwarded":
            self._abort_at_ingress(state, "OrchestratorUnavailable")

    def _on_sac_issued(self, msg: SacIssued) -> None:
        self._finish_ingress(msg.task_id)

    def _finish_ingress(self, task_id: str) -> None:
        state = self.ingress.pop(task_id, None)
        if state is not None:
            self.kernel.cancel_quietly(state.timer)

    def _abort_at_ingress(self, state: _IngressTask, reason: str) -> None:
        self.ingress.pop(state.req.task_id, None)
        self.kernel.cancel_quietly(state.timer)
        self.world.tracker.abort(state.req.task_id, reason)
        trail = (AuditEntry(state.req.task_id, AuditOp.ABORTED, -1, (self.id,), self.kernel.now, reason),)
        self._submit_audit(trail)

    # orchestration (phase 1) ----------------------------------------------
    def _orchestrate(self, req: SfcRequest, ingress: str) -> None:
        lm = self.kernel.latency
        cost = lm.cost("ledger_read") + lm.cost("seal") + lm.cost("sign")
        self.kernel.trace(self.id, "orch.accept", f"task={req.task_id} queued={len(self.orch)}")
        self.orch.submit(cost, lambda: self._issue_sac(req, ingress))

    def _issue_sac(self, req: SfcRequest, ingress: str) -> None:
        w = self.world
        now = self.kernel.now
        out = pre_verify_and_issue(self.id, self.keys[0], req, w.ledger, now, w.params.sac_ttl_ms,
                                   at=self.id, ephemeral_seed=self.kernel.entropy(f"sac:{req.task_id}"))
        res = w.tracker.tasks[req.task_id]
        if isinstance(out, Rejection):
            missing = ",".join(sorted(out.missing))
            self.kernel.trace(self.id, "sac.reject", f"task={req.task_id} missing={missing}")
            self.kernel.send(self.id, ingress, TaskRejected(req.task_id))
            w.tracker.abort(req.task_id, "Rejected")
            trail = (AuditEntry(req.task_id, AuditOp.ABORTED, -1, (self.id,), now, f"Rejected missing={missing}"),)
            self._submit_audit(trail)
            return
        res.orchestrator = self.id
        res.sac_issued_at = now
        self.kernel.trace(self.id, "sac.issue", f"task={req.task_id} uav={req.hops[0].uav_id}")
        self.kernel.send(self.id, ingress, SacIssued(req.task_id, self.id))
        first_es = w.es_of_domain[req.hops[0].domain_id]
        route = w.route(self.id, first_es)
        self._forward(SacDelivery(out, req.hops[0].uav_id, route, (), len(req.hops)))

    # relay ----------------------------------------------------------------
    def _forward(self, msg: SacDelivery | HcDelivery) -> None:
        if msg.route:
            nxt = msg.route[0]
            self.kernel.send(self.id, nxt, msg)
        else:
            self.kernel.send(self.id, msg.target, msg)

    def _relay(self, msg: SacDelivery | HcDelivery) -> None:
        route = msg.route[1:] if msg.route and msg.route[0] == self.id else msg.route
        self._forward(replace(msg, route=route))

    # phase 3 --------------------------------------------------------------
    def _issue_hc(self, src: str, req: HandoverRequest) -> None:
        w = self.world
        try:
            hc = issue_hc(src, self.id, self.keys[0], req.next_uav, req.hop_index, req.sealed_body, req.auth,
                          self.kernel.now)
        except ProtocolViolation as exc:
            self.kernel.trace(self.id, "hc.refuse", f"task={req.task_id} hop={req.hop_index} err={exc}")
            w.tracker.abort(req.task_id, "ProtocolViolation", req.hop_index)
            trail = req.trail + (AuditEntry(req.task_id, AuditOp.ABORTED, req.hop_index, (src, self.id),
                                            self.kernel.now, "ProtocolViolation"),)
            self._submit_audit(trail)
            return
        self.kernel.trace(self.id, "hc.issue", f"task={req.task_id} hop={req.hop_index} to={req.next_uav}")
        target_es = w.es_of_uav.get(req.next_uav, self.id)
        route = w.route(self.id, target_es, relay=True)
        self._forward(HcDelivery(hc, req.next_uav, route, req.trail, req.hops))

    # phase 4 --------------------------------------------------------------
    def _submit_audit(self, trail: Sequence[AuditEntry]) -> None:
        if not trail:
            return
        task_id = trail[0].task_id
        records = audit_records(trail, self.kernel.now)
        tracker = self.world.tracker

        def done(result):
            if isinstance(result, CommitReceipt):
                res = tracker.tasks.get(task_id)
                if res is not None:
                    res.audit_committed_at = result.commit_time
            else:
                self.kernel.trace(self.id, "audit.fail", f"task={task_id}")

        self.kernel.trace(self.id, "audit.submit", f"task={task_id} records={len(records)}")
        self.world.ledger.submit(records, self.id, done)


@dataclass
class _UavTask:
    hops: int
    auth: ExecutionAuthorization | None = None
    layers: dict[int, SealedBox] | None = None
    successor: str | None = None
    next_body: SealedBox | None = None
    trail: tuple[AuditEntry, ...] = ()
    req: SfcRequest | None = None
    wait: int | None = None
    initiated_at: int = 0


class UavNode:
    def __init__(self, world: "World", uav_id: str, domain_id: str):
        self.world = world
        self.kernel = world.kernel
        self.id = uav_id
        self.domain_id = domain_id
        self.es_id = world.es_of_domain[domain_id]
        self.tasks: dict[str, _UavTask] = {}

    @property
    def keys(self):
        return self.world.keys[self.id]

    def on_message(self, src: str, msg: Any) -> None:
        lm = self.kernel.latency
        if isinstance(msg, SacDelivery):
            self.kernel.timer(lm.cost("verify") + lm.cost("open"), self.id, "uav.sac", msg)
        elif isinstance(msg, HcDelivery):
            delay = lm.cost("verify") + lm.cost("open")
            if self.world.params.per_hop_es_check:
                delay += 2 * lm.intra_domain_ms + lm.cost("ledger_read")
            self.kernel.timer(delay, self.id, "uav.hc", msg)
        elif isinstance(msg, TaTask):
            self._ta_start(msg)
        elif isinstance(msg, Grant):
            self._ta_grant(msg)
        elif isinstance(msg, Deny):
            self._ta_deny(msg)
        else:
            raise TypeError(f"{self.id}: unexpected message {type(msg).__name__}")

    def on_timer(self, timer: Timer) -> None:
        kind = timer.kind
        if kind == "uav.sac":
            self._verify_sac(timer.data)
        elif kind == "uav.hc":
            self._verify_hc(timer.data)
        elif kind == "uav.handover":
            self._handover(timer.data)
        elif kind == "ta.sign":
            self._ta_request(timer.data)
        elif kind == "ta.handover":
            self._ta_handover(timer.data)
        elif kind == "ta.wait":
            self._ta_timeout(timer.data)
        else:
            raise ValueError(f"{self.id}: unexpected timer {kind}")

    def _es_key(self, es_id: str) -> bytes | None:
        ident = self.world.es_directory.get(es_id)
        return ident.verify_key if ident is not None else None

    def _report(self, trail: tuple[AuditEntry, ...]) -> None:
        self.kernel.send(self.id, self.es_id, TaskReport(trail))

    def _reject(self, task_id: str, hop: int, err: AuthError, trail: tuple[AuditEntry, ...]) -> None:
        self.kernel.trace(self.id, "auth.reject", f"task={task_id} hop={hop} check={err.check}")
        self.world.tracker.abort(task_id, err.check, hop)
        entry = AuditEntry(task_id, AuditOp.ABORTED, hop, (self.id,), self.kernel.now, err.check)
        self._report(trail + (entry,))

    # phases 2 and 3 -------------------------------------------------------
    def _verify_sac(self, msg: SacDelivery) -> None:
        sac = msg.sac
        now = self.kernel.now
        if sac.task_id in self.tasks:
            self.kernel.trace(self.id, "auth.duplicate", f"task={sac.task_id} hop=0")
            return
        try:
            auth, path = verify_sac(self.id, self.keys[1], sac, self._es_key(sac.orchestrator_id), now)
        except AuthError as err:
            self._reject(sac.task_id, 0, err, msg.trail)
            return
        self.kernel.trace(self.id, "sac.grant", f"task={sac.task_id} hop=0 orch={sac.orchestrator_id}")
        self.world.tracker.grant(sac.task_id, 0, self.id, len(path.hops))
        trail = msg.trail + (AuditEntry(sac.task_id, AuditOp.TASK_START, 0, (sac.orchestrator_id, self.id), now),)
        st = self.tasks[sac.task_id] = _UavTask(len(path.hops), auth, trail=trail)
        if len(path.hops) == 1:
            self._finish(sac.task_id, st)
            return
        seeds = [self.kernel.entropy(f"layer:{sac.task_id}:{k}") for k in range(len(path.hops) - 1)]
        st.layers = build_layers(path, seeds)
        st.successor = path.hops[1].uav_id
        st.next_body = st.layers[1]
        lm = self.kernel.latency
        delay = lm.cost("seal") * (len(path.hops) - 1) + lm.cost("vnf_exec")
        self.kernel.timer(delay, self.id, "uav.handover", sac.task_id)

    def _verify_hc(self, msg: HcDelivery) -> None:
        hc = msg.hc
        now = self.kernel.now
        if hc.task_id in self.tasks and self.tasks[hc.task_id].auth is not None \
                and self.tasks[hc.task_id].auth.hop_index >= hc.hop_index:
            self.kernel.trace(self.id, "auth.duplicate", f"task={hc.task_id} hop={hc.hop_index}")
            return
        try:
            if self.world.params.per_hop_es_check and not self._es_confirms(hc.sender_es):
                raise _EsCheckFailed(f"{hc.sender_es} not confirmed by {self.es_id}")
            auth, layer = verify_hc(self.id, self.keys[1], hc, self._es_key(hc.sender_es), now,
                                    self.world.delta_ms)
        except AuthError as err:
            self._reject(hc.task_id, hc.hop_index, err, msg.trail)
            return
        prev = msg.trail[-1].nodes[-1] if msg.trail else ""
        self.kernel.trace(self.id, "hc.grant", f"task={hc.task_id} hop={hc.hop_index} from={prev} via={hc.sender_es}")
        self.world.tracker.grant(hc.task_id, hc.hop_index, self.id, msg.hops)
        entry = AuditEntry(hc.task_id, AuditOp.HANDOVER, hc.hop_index, (prev, hc.sender_es, self.id), now)
        st = self.tasks[hc.task_id] = _UavTask(msg.hops, auth, trail=msg.trail + (entry,))
        if layer.successor is None:
            self._finish(hc.task_id, st)
            return
        st.successor = layer.successor
        st.next_body = SealedBox(layer.inner)
        self.kernel.timer(self.kernel.latency.cost("vnf_exec"), self.id, "uav.handover", hc.task_id)

    def _es_confirms(self, sender_es: str) -> bool:
        if not self.kernel.is_live(self.es_id):
            return False
        return self.world.ledger.replica(self.es_id).registry.is_registered(sender_es)

    def _handover(self, task_id: str) -> None:
        st = self.tasks[task_id]
        hop = st.auth.hop_index + 1
        self.kernel.send(self.id, self.es_id,
                         HandoverRequest(task_id, hop, st.successor, st.next_body, st.auth, st.trail, st.hops))

    def _finish(self, task_id: str, st: _UavTask) -> None:
        entry = AuditEntry(task_id, AuditOp.TASK_END, st.auth.hop_index, (self.id,), self.kernel.now)
        self.kernel.trace(self.id, "task.complete", f"task={task_id}")
        self._report(st.trail + (entry,))

    # centralized TA -------------------------------------------------------
    def _ta_start(self, msg: TaTask) -> None:
        st = self.tasks.setdefault(msg.req.task_id, _UavTask(len(msg.req.hops), req=msg.req))
        st.req = msg.req
        self.kernel.timer(self.kernel.latency.cost("sign"), self.id, "ta.sign", msg)

    def _ta_request(self, msg: TaTask) -> None:
        task_id = msg.req.task_id
        sig = crypto.sign(self.keys[0], auth_request_bytes(task_id, msg.hop_index, self.id), self.id)
        self.kernel.send(self.id, TA_ID, AuthRequest(task_id, msg.hop_index, self.id, msg.initiated_at, sig))
        st = self.tasks[task_id]
        st.next_body = None
        st.auth = None
        st.successor = msg.req.hops[msg.hop_index + 1].uav_id if msg.hop_index + 1 < len(msg.req.hops) else None
        st.wait = self.kernel.timer(self.world.task_timeout_ms, self.id, "ta.wait", (task_id, msg.hop_index))
        st.initiated_at = msg.initiated_at

    def _ta_grant(self, msg: Grant) -> None:
        st = self.tasks.get(msg.task_id)
        if st is None or st.wait is None:
            return
        self.kernel.cancel_quietly(st.wait)
        st.wait = None
        now = self.kernel.now
        st.auth = ExecutionAuthorization(msg.task_id, self.id, msg.hop_index, now)
        self.kernel.trace(self.id, "ta.grant", f"task={msg.task_id} hop={msg.hop_index}")
        self.world.tracker.grant(msg.task_id, msg.hop_index, self.id, st.hops)
        if st.successor is not None:
            nxt = TaTask(st.req, msg.hop_index + 1, st.initiated_at)
            self.kernel.timer(self.kernel.latency.cost("vnf_exec"), self.id, "ta.handover", (st.successor, nxt))

    def _ta_handover(self, data) -> None:
        successor, msg = data
        self.kernel.send(self.id, successor, msg)

    def _ta_deny(self, msg: Deny) -> None:
        st = self.tasks.get(msg.task_id)
        if st is not None:
            self.kernel.cancel_quietly(st.wait)
            st.wait = None
        self.kernel.trace(self.id, "auth.reject", f"task={msg.task_id} hop={msg.hop_index} check={msg.reason}")
        self.world.tracker.abort(msg.task_id, msg.reason, msg.hop_index)

    def _ta_timeout(self, data) -> None:
        task_id, hop = data
        st = self.tasks.get(task_id)
        if st is not None and st.wait is not None:
            st.wait = None
            self.world.tracker.abort(task_id, "TaUnavailable", hop)


class _EsCheckFailed(AuthError):
    check = "EsCheckFailed"


# world -----------------------------------------------------------------------

def node_keys(seed: int, node_id: str) -> tuple[crypto.KeyPair, crypto.KeyPair]:
    return (keygen(derive_seed("sign", seed, node_id), KeyKind.SIGNING),
            keygen(derive_seed("seal", seed, node_id), KeyKind.SEALING))


class World:
    """All nodes of one simulated deployment running one scheme."""

    def __init__(
        self,
        domains: Iterable[DomainDescriptor],
        topology: EsTopology,
        scheme: SchemeId | str = SchemeId.PROPOSED,
        params: WorldParams | None = None,
        seed: int = 0,
        unregistered: Iterable[str] = (),
        trace: bool = True,
        key_seed: int | None = None,
    ):
        self.domains = sorted(domains, key=lambda d: d.domain_id)
        self.topology = topology
        self.scheme = SchemeId.parse(scheme) if isinstance(scheme, str) else scheme
        self.params = params or WorldParams()
        self.seed = seed
        self.kernel = Kernel(seed, self.params.latency, topology, trace=trace)
        self.tracker = Tracker(self.kernel, self.scheme)
        self.es_of_domain = {d.domain_id: d.es_id for d in self.domains}
        self.es_of_uav = {u: d.es_id for d in self.domains for u in d.uav_ids}
        self._check_layout()
        es_ids = sorted(self.es_of_domain.values())
        self.fixed_orchestrator = self.params.fixed_orchestrator or es_ids[0]
        if self.fixed_orchestrator not in es_ids:
            raise ConfigError("protocol.fixed_orchestrator", f"{self.fixed_orchestrator} is not an ES")

        kseed = seed if key_seed is None else key_seed
        self.keys: dict[str, tuple[crypto.KeyPair, crypto.KeyPair]] = {}
        self.identities: dict[str, NodeIdentity] = {}
        for d in self.domains:
            self._make_identity(kseed, d.es_id, Role.EDGE_SERVER, d.domain_id)
            for u in sorted(d.uav_ids):
                self._make_identity(kseed, u, Role.UAV, d.domain_id)
        skip = set(unregistered)
        genesis_ids = [i for i in self.identities if i not in skip]
        self.es_directory = {e: self.identities[e] for e in es_ids}

        lp = self.params
        self.ledger = ConsortiumLedger(
            self.kernel, es_ids,
            genesis_records=[registration(self.identities[i]) for i in genesis_ids],
            batch_size=lp.batch_size, batch_timeout_ms=lp.batch_timeout_ms, view_timeout_ms=lp.view_timeout_ms,
        )
        self.es_nodes: dict[str, EsNode] = {}
        self.uav_nodes: dict[str, UavNode] = {}
        for d in self.domains:
            node = self.es_nodes[d.es_id] = EsNode(self, d)
            self.kernel.add_node(d.es_id, node, Role.EDGE_SERVER, d.domain_id)
        for d in self.domains:
            for u in sorted(d.uav_ids):
                node = self.uav_nodes[u] = UavNode(self, u, d.domain_id)
                self.kernel.add_node(u, node, Role.UAV, d.domain_id)
        self.ta: TaNode | None = None
        if self.scheme is SchemeId.CENTRALIZED_TA:
            registry = {i: self.identities[i] for i in genesis_ids}
            self.ta = TaNode(self.kernel, registry)
            self.kernel.add_node(TA_ID, self.ta, Role.TRUSTED_AUTHORITY)
        self.kernel.crash_hooks.append(self._on_node_event)

        lm = self.params.latency
        es_span = topology.diameter_latency() if len(es_ids) > 1 else 0
        self.delta_ms = lp.delta_ms if lp.delta_ms is not None else 2 * (lm.inter_domain_ms + 2 * es_span)
        self.task_timeout_ms = lp.task_timeout_ms if lp.task_timeout_ms is not None else lp.sac_ttl_ms
        if lp.election.window_ms is not None:
            window_for(es_ids, topology, lp.election)

    def _check_layout(self) -> None:
        seen: set[str] = set()
        for d in self.domains:
            if d.es_id not in self.topology.es_ids:
                raise ConfigError("topology.domains", f"{d.es_id} is missing from the ES topology")
            if seen & d.uav_ids:
                raise ConfigError("topology.domains", f"UAVs of {d.domain_id} overlap another domain")
            seen |= d.uav_ids
        if not self.topology.is_connected():
            raise ConfigError("topology.links", "ES backbone is not connected")

    def _make_identity(self, kseed: int, node_id: str, role: Role, domain_id: str | None) -> None:
        if node_id in self.identities:
            raise ConfigError("topology.domains", f"duplicate node id {node_id}")
        sk, ek = node_keys(kseed, node_id)
        self.keys[node_id] = (sk, ek)
        self.identities[node_id] = NodeIdentity(node_id, role, domain_id, sk.public_part, ek.public_part)

    def _on_node_event(self, node_id: str, action: str) -> None:
        node = self.es_nodes.get(node_id)
        if node is not None and action == "crash":
            node.on_crash()

    def route(self, src_es: str, dst_es: str, relay: bool = False) -> tuple[str, ...]:
        """ES hops a credential takes after leaving ``src_es``.

        Under the fixed-orchestrator scheme, cross-domain relays pass through
        the fixed orchestrator, which is the only ES that coordinates tasks.
        """
        hops: list[str] = []
        if relay and self.scheme is SchemeId.STATIC_CONFIG and src_es != dst_es:
            hops.append(self.fixed_orchestrator)
        hops.append(dst_es)
        out: list[str] = []
        prev = src_es
        for h in hops:
            if h != prev:
                out.append(h)
                prev = h
        return tuple(out)

    # driving --------------------------------------------------------------
    def submit(self, req: SfcRequest, at: int | None = None) -> None:
        """Schedule ``req`` to arrive at its ingress ES at absolute time ``at``."""
        at = self.kernel.now if at is None else at
        if not req.hops:
            raise ValueError("request has no hops")
        ingress = self.es_of_domain.get(req.hops[0].domain_id)
        if ingress is None:
            raise ValueError(f"unknown domain {req.hops[0].domain_id}")
        self.tracker.get(req)
        self.kernel.schedule(at - self.kernel.now, ingress, TaskArrival(req))

    def run_task(self, req: SfcRequest, now: int | None = None) -> TaskResult:
        self.submit(req, now)
        self.kernel.run()
        return self.tracker.tasks[req.task_id]

    def run(self, until: int | None = None) -> list[TaskResult]:
        self.kernel.run(until)
        return self.tracker.results()


def run_sfc_task(req: SfcRequest, world: World, now: int | None = None) -> TaskResult:
    """Drive one request through the whole pipeline and return its result."""
    return world.run_task(req, now)
