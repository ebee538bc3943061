"""Per-task orchestrator election among the ESs of the traversed domains.

Candidates score themselves locally, broadcast the score to the other
candidates, and at the close of a fixed decision window each one declares
itself winner iff it saw nothing better.  Scores are exact ``Fraction``s so
every candidate orders them identically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping

from .errors import ConfigError
from .model import DomainDescriptor, EsTopology, Role, SfcRequest, hop_weights, traversed_domains
from .simnet import Kernel, Timer

log = logging.getLogger(__name__)


class NoCandidates(ValueError):
    pass


@dataclass(frozen=True)
class ElectionParams:
    alpha: Fraction = Fraction(1, 2)
    beta: Fraction = Fraction(1, 2)
    window_ms: int | None = None  # None: 2 x widest candidate spread, per task

    def __post_init__(self):
        a, b = Fraction(self.alpha), Fraction(self.beta)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        if a < 0 or b < 0:
            raise ConfigError("election.alpha", "weights must be non-negative")
        if a + b != 1:
            raise ConfigError("election.alpha", "alpha + beta must equal 1")
        if self.window_ms is not None and self.window_ms < 0:
            raise ConfigError("election.window_ms", "must be >= 0")


@dataclass(frozen=True)
class ScoreReport:
    candidate_es: str
    task_id: str
    centrality: Fraction
    coverage: Fraction
    composite: Fraction
    broadcast_at: int = 0

    def rank_key(self) -> tuple:
        # higher composite first, then smaller id
        return (-self.composite, self.candidate_es)

    def beats(self, other: "ScoreReport") -> bool:
        return self.rank_key() < other.rank_key()


@dataclass(frozen=True)
class ElectionOutcome:
    task_id: str
    winner_es: str
    reports: tuple[ScoreReport, ...]
    decided_at: int
    declared_by: tuple[str, ...] = ()


def _es_of(servers: Iterable[DomainDescriptor]) -> dict[str, str]:
    return {d.domain_id: d.es_id for d in servers}


def filter_candidates(req: SfcRequest, servers: Iterable[DomainDescriptor]) -> set[str]:
    es_of = _es_of(servers)
    cands = {es_of[d] for d in traversed_domains(req) if d in es_of}
    if not cands:
        raise NoCandidates(f"no ES manages any domain of task {req.task_id}")
    return cands


def centrality(candidate: str, req: SfcRequest, topo: EsTopology,
               servers: Iterable[DomainDescriptor]) -> Fraction:
    """Hop-weighted inverse-distance closeness of ``candidate`` to the task's domains."""
    es_of = _es_of(servers)
    weights = hop_weights(req)
    total = sum(weights.values())
    acc = Fraction(0)
    for dom in traversed_domains(req):
        acc += Fraction(weights[dom], 1 + topo.hop_distance(candidate, es_of[dom]))
    return acc / total


def coverage(candidate: str, req: SfcRequest, servers: Iterable[DomainDescriptor]) -> Fraction:
    """Share of the task's distinct UAVs that sit in ``candidate``'s domain."""
    managed: frozenset[str] = frozenset()
    for d in servers:
        if d.es_id == candidate:
            managed = d.uav_ids
            break
    uavs = set(req.uav_ids())
    return Fraction(len(uavs & managed), len(uavs))


def score(candidate: str, req: SfcRequest, topo: EsTopology, servers: Iterable[DomainDescriptor],
          params: ElectionParams, broadcast_at: int = 0) -> ScoreReport:
    servers = list(servers)
    c = centrality(candidate, req, topo, servers)
    v = coverage(candidate, req, servers)
    return ScoreReport(candidate, req.task_id, c, v, params.alpha * c + params.beta * v, broadcast_at)


def best_report(reports: Iterable[ScoreReport]) -> ScoreReport:
    return min(reports, key=ScoreReport.rank_key)


def required_window(candidates: Iterable[str], topo: EsTopology) -> int:
    """Smallest window that lets every candidate's report reach every other one."""
    cands = sorted(candidates)
    if len(cands) < 2:
        return 0
    return 2 * topo.diameter_latency(cands)


def window_for(candidates: Iterable[str], topo: EsTopology, params: ElectionParams) -> int:
    need = required_window(candidates, topo)
    if params.window_ms is None:
        return need
    if params.window_ms < need:
        raise ConfigError("election.window_ms", f"{params.window_ms} ms is below the required {need} ms")
    return params.window_ms


# distributed round ---------------------------------------------------------

@dataclass(frozen=True)
class ElectMsg:
    """Sent by the ingress ES to every candidate to open a round."""
    req: SfcRequest
    attempt: int
    trigger_at: int
    window_ms: int
    ingress: str
    candidates: tuple[str, ...]


@dataclass(frozen=True)
class ScoreMsg:
    report: ScoreReport
    attempt: int


@dataclass
class CandidateRound:
    """One candidate's view of one election round."""

    kernel: Kernel
    es_id: str
    elect: ElectMsg
    own: ScoreReport
    on_decide: Callable[["CandidateRound", ElectionOutcome], None]
    reports: dict[str, ScoreReport] = field(default_factory=dict)
    decided: bool = False

    @property
    def key(self) -> tuple[str, int]:
        return (self.elect.req.task_id, self.elect.attempt)

    def start(self) -> None:
        self.reports[self.es_id] = self.own
        for other in self.elect.candidates:
            if other != self.es_id:
                self.kernel.send(self.es_id, other, ScoreMsg(self.own, self.elect.attempt))
        self.kernel.trace(self.es_id, "election.score",
                          f"task={self.own.task_id} attempt={self.elect.attempt} composite={self.own.composite}")
        close_at = self.elect.trigger_at + self.elect.window_ms
        self.kernel.timer(max(0, close_at - self.kernel.now), self.es_id, "election.window", self.key)

    def receive(self, report: ScoreReport) -> None:
        if not self.decided:
            self.reports.setdefault(report.candidate_es, report)

    def on_window(self) -> None:
        # Re-queue at the same instant so reports landing exactly on the
        # boundary (scheduled after this timer) are still counted.
        self.kernel.timer(0, self.es_id, "election.decide", self.key)

    def decide(self) -> ElectionOutcome:
        self.decided = True
        reports = tuple(sorted(self.reports.values(), key=lambda r: r.candidate_es))
        winner = best_report(reports)
        declared = (self.es_id,) if winner.candidate_es == self.es_id else ()
        outcome = ElectionOutcome(self.own.task_id, winner.candidate_es, reports, self.kernel.now, declared)
        self.kernel.trace(self.es_id, "election.decide",
                          f"task={self.own.task_id} attempt={self.elect.attempt} winner={winner.candidate_es}")
        self.on_decide(self, outcome)
        return outcome


class ElectionHost:
    """Election logic embedded in an ES node; the world's ES nodes delegate to it."""

    def __init__(self, kernel: Kernel, es_id: str, topo: EsTopology,
                 servers: Iterable[DomainDescriptor], params: ElectionParams,
                 on_decide: Callable[[CandidateRound, ElectionOutcome], None]):
        self.kernel = kernel
        self.es_id = es_id
        self.topo = topo
        self.servers = list(servers)
        self.params = params
        self.on_decide = on_decide
        self.rounds: dict[tuple[str, int], CandidateRound] = {}
        self.early: dict[tuple[str, int], list[ScoreReport]] = {}

    def on_elect(self, msg: ElectMsg) -> None:
        key = (msg.req.task_id, msg.attempt)
        if key in self.rounds:
            return
        own = score(self.es_id, msg.req, self.topo, self.servers, self.params, self.kernel.now)
        rnd = CandidateRound(self.kernel, self.es_id, msg, own, self._decided)
        self.rounds[key] = rnd
        rnd.start()
        for rep in self.early.pop(key, []):
            rnd.receive(rep)

    def on_score(self, msg: ScoreMsg) -> None:
        key = (msg.report.task_id, msg.attempt)
        rnd = self.rounds.get(key)
        if rnd is None:
            self.early.setdefault(key, []).append(msg.report)
        else:
            rnd.receive(msg.report)

    def on_timer(self, timer: Timer) -> bool:
        if timer.kind == "election.window":
            rnd = self.rounds.get(timer.data)
            if rnd is not None:
                rnd.on_window()
            return True
        if timer.kind == "election.decide":
            rnd = self.rounds.get(timer.data)
            if rnd is not None and not rnd.decided:
                rnd.decide()
            return True
        return False

    def _decided(self, rnd: CandidateRound, outcome: ElectionOutcome) -> None:
        del self.rounds[rnd.key]
        self.on_decide(rnd, outcome)

    def reset(self) -> None:
        self.rounds.clear()
        self.early.clear()


class _StandaloneNode:
    def __init__(self, host: ElectionHost):
        self.host = host

    def on_message(self, src, msg):
        if isinstance(msg, ElectMsg):
            self.host.on_elect(msg)
        elif isinstance(msg, ScoreMsg):
            self.host.on_score(msg)

    def on_timer(self, timer):
        self.host.on_timer(timer)


def run_election(req: SfcRequest, servers: Iterable[DomainDescriptor], topo: EsTopology,
                 params: ElectionParams | None = None, kernel: Kernel | None = None,
                 ingress: str | None = None) -> ElectionOutcome:
    """Run one distributed round on a private kernel and return the agreed outcome.

    Raises ``RuntimeError`` if candidates disagree or not exactly one declares,
    which would mean the window precondition was violated.
    """
    params = params or ElectionParams()
    servers = list(servers)
    cands = sorted(filter_candidates(req, servers))
    window = window_for(cands, topo, params)
    kernel = kernel or Kernel(0, topology=topo, trace=False)
    outcomes: dict[str, ElectionOutcome] = {}

    def record(rnd: CandidateRound, outcome: ElectionOutcome) -> None:
        outcomes[rnd.es_id] = outcome

    for es in cands:
        if es not in kernel.nodes:
            host = ElectionHost(kernel, es, topo, servers, params, record)
            kernel.add_node(es, _StandaloneNode(host), Role.EDGE_SERVER)
    ingress = ingress or _es_of(servers)[req.hops[0].domain_id]
    if ingress not in kernel.nodes:
        kernel.add_node(ingress, _StandaloneNode(ElectionHost(kernel, ingress, topo, servers, params, record)),
                        Role.EDGE_SERVER)
    trigger = kernel.now
    elect = ElectMsg(req, 0, trigger, window, ingress, tuple(cands))
    for es in cands:
        kernel.send(ingress, es, elect)
    kernel.run()
    live = [o for es, o in outcomes.items() if kernel.is_live(es)]
    winners = {o.winner_es for o in live}
    declared = tuple(sorted(es for o in live for es in o.declared_by))
    if len(winners) != 1 or len(declared) != 1:
        raise RuntimeError(f"election for {req.task_id} did not converge: winners={winners} declared={declared}")
    first = live[0]
    return ElectionOutcome(req.task_id, first.winner_es, first.reports, trigger + window, declared)
