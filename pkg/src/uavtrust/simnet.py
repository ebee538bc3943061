"""Deterministic discrete-event kernel.

Events fire in ``(fire_at, seq)`` order; ``seq`` is a global counter so two
runs of the same scenario and seed produce byte-identical traces.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Protocol

from .crypto import derive_seed
from .model import EsTopology, Role

log = logging.getLogger(__name__)

TRACE_HEADER = "#format=uavtrust-trace/1"

DEFAULT_PROC_COSTS = {
    "sign": 1,
    "verify": 1,
    "seal": 1,
    "open": 1,
    "ledger_read": 2,
    "consensus_phase": None,  # None -> es_link_ms
    "vnf_exec": 5,
}


class SimError(Exception):
    pass


class NoSuchEvent(SimError):
    pass


class RunawaySimulation(SimError):
    pass


@dataclass
class LatencyModel:
    intra_domain_ms: int = 2
    inter_domain_ms: int = 20
    es_link_ms: int = 10
    ta_link_ms: int = 30
    proc_costs: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        costs = dict(DEFAULT_PROC_COSTS)
        costs.update(self.proc_costs)
        if costs["consensus_phase"] is None:
            costs["consensus_phase"] = self.es_link_ms
        self.proc_costs = costs
        for name in ("intra_domain_ms", "inter_domain_ms", "es_link_ms", "ta_link_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.inter_domain_ms < self.intra_domain_ms:
            raise ValueError("inter_domain_ms must be >= intra_domain_ms")
        for k, v in costs.items():
            if v < 0:
                raise ValueError(f"proc cost {k} must be >= 0")

    def cost(self, op: str) -> int:
        return self.proc_costs[op]


@dataclass(frozen=True)
class Crash:
    node_id: str
    crash_at: int
    recover_at: int | None = None


@dataclass
class FailureScript:
    crashes: list[Crash] = field(default_factory=list)

    @classmethod
    def of(cls, *entries: tuple) -> "FailureScript":
        return cls([Crash(*e) for e in entries])


@dataclass(frozen=True)
class Timer:
    """Local timer payload; ``kind`` selects the handler branch."""
    kind: str
    data: Any = None


@dataclass(frozen=True)
class Delivery:
    src: str
    msg: Any


@dataclass(frozen=True)
class _Control:
    action: str  # "crash" | "recover"


class Node(Protocol):
    def on_message(self, src: str, msg: Any) -> None: ...
    def on_timer(self, timer: Timer) -> None: ...


@dataclass(frozen=True)
class NodeInfo:
    role: Role | str
    domain_id: str | None


class Kernel:
    """Virtual clock, event queue, message routing and failure injection."""

    def __init__(
        self,
        seed: int = 0,
        latency: LatencyModel | None = None,
        topology: EsTopology | None = None,
        max_events: int = 20_000_000,
        trace: bool = True,
    ):
        self.now = 0
        self.seed = seed
        self.rng = random.Random(seed)
        self.latency = latency or LatencyModel()
        self.topology = topology
        self.max_events = max_events
        self.tracing = trace
        self.trace_lines: list[str] = []
        self._queue: list[tuple[int, int, int]] = []
        self._events: dict[int, tuple[str, Any]] = {}
        self._seq = itertools.count()
        self._fired = 0
        self._entropy = itertools.count()
        self._current_seq = -1
        self.nodes: dict[str, Node] = {}
        self.info: dict[str, NodeInfo] = {}
        self.crashed: set[str] = set()
        self.crash_hooks: list[Callable[[str, str], None]] = []
        # Adversary hook: (src, dst, msg) -> msg, or None to drop.
        self.interceptor: Callable[[str, str, Any], Any] | None = None

    # registration -------------------------------------------------------
    def add_node(self, node_id: str, node: Node, role: Role | str, domain_id: str | None = None) -> None:
        if node_id in self.nodes:
            raise SimError(f"duplicate node id {node_id}")
        self.nodes[node_id] = node
        self.info[node_id] = NodeInfo(role, domain_id)

    def apply_failures(self, script: FailureScript | Iterable[Crash] | None) -> None:
        if script is None:
            return
        crashes = script.crashes if isinstance(script, FailureScript) else list(script)
        for c in crashes:
            self._push(c.crash_at, c.node_id, _Control("crash"))
            if c.recover_at is not None:
                self._push(c.recover_at, c.node_id, _Control("recover"))

    # scheduling ---------------------------------------------------------
    def _push(self, fire_at: int, target: str, payload: Any) -> int:
        seq = next(self._seq)
        heapq.heappush(self._queue, (fire_at, seq, seq))
        self._events[seq] = (target, payload)
        return seq

    def schedule(self, delay_ms: int, target: str, payload: Any) -> int:
        if delay_ms < 0:
            raise ValueError("delay_ms must be >= 0")
        return self._push(self.now + int(delay_ms), target, payload)

    def timer(self, delay_ms: int, target: str, kind: str, data: Any = None) -> int:
        return self.schedule(delay_ms, target, Timer(kind, data))

    def cancel(self, event_id: int) -> None:
        if self._events.pop(event_id, None) is None:
            raise NoSuchEvent(f"event {event_id} already fired or cancelled")

    def cancel_quietly(self, event_id: int | None) -> None:
        if event_id is not None:
            self._events.pop(event_id, None)

    def pending(self) -> int:
        return len(self._events)

    # messaging ----------------------------------------------------------
    def is_live(self, node_id: str) -> bool:
        return node_id not in self.crashed

    def link_latency(self, src: str, dst: str) -> int:
        if src == dst:
            return 0
        a, b = self.info[src], self.info[dst]
        lm = self.latency
        if a.role == Role.TRUSTED_AUTHORITY or b.role == Role.TRUSTED_AUTHORITY:
            return lm.ta_link_ms
        if a.role == Role.EDGE_SERVER and b.role == Role.EDGE_SERVER:
            if self.topology is None:
                return lm.es_link_ms
            return self.topology.path_latency(src, dst)
        if a.domain_id is not None and a.domain_id == b.domain_id:
            return lm.intra_domain_ms
        return lm.inter_domain_ms

    def send(self, src: str, dst: str, msg: Any, delay_ms: int = 0) -> int | None:
        """Deliver ``msg`` after ``delay_ms`` of local work plus link latency.

        Returns the delivery event id, or None when the sender is down or the
        adversary dropped the message.
        """
        if src in self.crashed:
            return None
        if self.interceptor is not None:
            msg = self.interceptor(src, dst, msg)
            if msg is None:
                return None
        return self.schedule(delay_ms + self.link_latency(src, dst), dst, Delivery(src, msg))

    def entropy(self, label: str = "") -> bytes:
        """Reproducible 32 bytes, independent of the workload RNG stream."""
        return derive_seed("entropy", self.seed, next(self._entropy), label)

    # tracing ------------------------------------------------------------
    def trace(self, actor: str, event: str, detail: str = "") -> None:
        if self.tracing:
            self.trace_lines.append(f"{self.now}\t{self._current_seq}\t{actor}\t{event}\t{detail}")

    def trace_text(self) -> str:
        return "\n".join([TRACE_HEADER, *self.trace_lines]) + "\n"

    # main loop ----------------------------------------------------------
    def step(self) -> bool:
        while self._queue:
            fire_at, seq, eid = heapq.heappop(self._queue)
            entry = self._events.pop(eid, None)
            if entry is None:
                continue
            if fire_at < self.now:
                raise SimError("causality violation")
            self.now = fire_at
            self._current_seq = seq
            self._fired += 1
            if self._fired > self.max_events:
                raise RunawaySimulation(f"more than {self.max_events} events")
            self._dispatch(*entry)
            return True
        return False

    def run(self, until: int | None = None) -> int:
        """Process events until the queue drains or virtual time passes ``until``."""
        queue = self._queue
        while queue:
            if until is not None and queue[0][0] > until:
                self.now = max(self.now, until)
                break
            if not self.step():
                break
        else:
            if until is not None:
                self.now = max(self.now, until)
        return self.now

    def _dispatch(self, target: str, payload: Any) -> None:
        if isinstance(payload, _Control):
            if payload.action == "crash":
                if target not in self.crashed:
                    self.crashed.add(target)
                    self.trace(target, "node.crash")
            else:
                if target in self.crashed:
                    self.crashed.discard(target)
                    self.trace(target, "node.recover")
            for hook in self.crash_hooks:
                hook(target, payload.action)
            return
        if target in self.crashed:
            if isinstance(payload, Delivery):
                self.trace(target, "msg.drop", f"from={payload.src} kind={type(payload.msg).__name__}")
            return
        node = self.nodes.get(target)
        if node is None:
            raise SimError(f"event for unknown node {target}")
        if isinstance(payload, Delivery):
            node.on_message(payload.src, payload.msg)
        elif isinstance(payload, Timer):
            node.on_timer(payload)
        else:
            node.on_message(target, payload)


class Server:
    """Single-server queue owned by one node; jobs run one at a time.

    Jobs are ordered by ``priority`` (FIFO by default).  Completion fires as a
    timer on the owner so crashes suppress it.
    """

    def __init__(self, kernel: Kernel, owner: str, name: str):
        self.kernel = kernel
        self.owner = owner
        self.name = name
        self._jobs: list[tuple[Any, int, int, Callable[[], None]]] = []
        self._count = itertools.count()
        self.busy = False
        self.served = 0

    def submit(self, service_ms: int, done: Callable[[], None], priority: Any = None) -> None:
        n = next(self._count)
        heapq.heappush(self._jobs, (priority if priority is not None else n, n, service_ms, done))
        if not self.busy:
            self._start_next()

    def _start_next(self) -> None:
        if not self._jobs or not self.kernel.is_live(self.owner):
            self.busy = False
            return
        _, _, service_ms, done = heapq.heappop(self._jobs)
        self.busy = True
        self.kernel.timer(service_ms, self.owner, "server.done", (self, done))

    def finish(self, done: Callable[[], None]) -> None:
        self.served += 1
        done()
        self._start_next()

    def reset(self) -> None:
        """Drop queued work (owner crashed)."""
        self._jobs.clear()
        self.busy = False

    def __len__(self) -> int:
        return len(self._jobs)
