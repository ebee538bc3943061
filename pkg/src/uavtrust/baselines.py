"""Comparison schemes: a centralized trust authority and a fixed orchestrator.

Both run on the same kernel, keys and processing costs as the proposed
scheme; only who verifies, and where messages are routed, differs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Any

from . import crypto
from .ledger import canonical
from .model import NodeIdentity, SfcRequest, Status
from .simnet import Kernel, Server, Timer

if TYPE_CHECKING:
    from .world import TaskResult, World

log = logging.getLogger(__name__)

TA_ID = "ta"


class SchemeId(str, Enum):
    PROPOSED = "proposed"
    CENTRALIZED_TA = "centralized-ta"
    STATIC_CONFIG = "static-config"

    @property
    def label(self) -> str:
        return {"proposed": "Proposed", "centralized-ta": "CentralizedTA", "static-config": "StaticConfig"}[self.value]

    @classmethod
    def parse(cls, text: str) -> "SchemeId":
        for s in cls:
            if text in (s.value, s.label, s.name):
                return s
        raise ValueError(f"unknown scheme {text!r}")


# TA-scheme messages ----------------------------------------------------------

@dataclass(frozen=True)
class TaTask:
    """Task handed to the UAV serving ``hop_index`` (plain, unauthenticated handover)."""
    req: SfcRequest
    hop_index: int
    initiated_at: int


@dataclass(frozen=True)
class AuthRequest:
    task_id: str
    hop_index: int
    uav_id: str
    initiated_at: int
    signature: crypto.Signature

    def signed_bytes(self) -> bytes:
        return auth_request_bytes(self.task_id, self.hop_index, self.uav_id)


def auth_request_bytes(task_id: str, hop_index: int, uav_id: str) -> bytes:
    return canonical({"task_id": task_id, "hop_index": hop_index, "uav_id": uav_id})


@dataclass(frozen=True)
class Grant:
    task_id: str
    hop_index: int


@dataclass(frozen=True)
class Deny:
    task_id: str
    hop_index: int
    reason: str


class TaNode:
    """Remote trust authority: verifies every hop itself, one request at a time.

    The queue is ordered by task initiation time, then hop, so older tasks
    are never starved by a flood of newer first hops.
    """

    def __init__(self, kernel: Kernel, registry: dict[str, NodeIdentity]):
        self.kernel = kernel
        self.registry = registry
        self.server = Server(kernel, TA_ID, "ta-verify")
        kernel.crash_hooks.append(self._on_node_event)

    def _on_node_event(self, node_id: str, action: str) -> None:
        if node_id == TA_ID and action == "crash":
            self.server.reset()

    def on_message(self, src: str, msg: Any) -> None:
        if not isinstance(msg, AuthRequest):
            return
        cost = self.kernel.latency.cost("verify")
        self.server.submit(cost, lambda: self._decide(src, msg), (msg.initiated_at, msg.task_id, msg.hop_index))

    def _decide(self, src: str, msg: AuthRequest) -> None:
        ident = self.registry.get(msg.uav_id)
        ok = (
            ident is not None
            and ident.status is Status.REGISTERED
            and src == msg.uav_id
            and crypto.verify(ident.verify_key, msg.signed_bytes(), msg.signature)
        )
        self.kernel.trace(TA_ID, "ta.verify", f"task={msg.task_id} hop={msg.hop_index} uav={msg.uav_id} ok={int(ok)}")
        if ok:
            self.kernel.send(TA_ID, src, Grant(msg.task_id, msg.hop_index))
        else:
            self.kernel.send(TA_ID, src, Deny(msg.task_id, msg.hop_index, "TaRejected"))

    def on_timer(self, timer: Timer) -> None:
        if timer.kind == "server.done":
            server, done = timer.data
            server.finish(done)


def closed_form_ta_latency(hops: int, link_ms: list[int], kernel_latency) -> int:
    """Unloaded TA-scheme latency: ingress hand-off, then per hop sign, round
    trip and verify, with function execution and a plain handover between hops.
    """
    lm = kernel_latency
    per_auth = lm.cost("sign") + 2 * lm.ta_link_ms + lm.cost("verify")
    between = sum(lm.cost("vnf_exec") + link for link in link_ms)
    return lm.intra_domain_ms + hops * per_auth + between


def run_centralized_ta(req: SfcRequest, world: "World", now: int | None = None) -> "TaskResult":
    if world.scheme is not SchemeId.CENTRALIZED_TA:
        raise ValueError("world was not built for the centralized-TA scheme")
    return world.run_task(req, now)


def run_static_config(req: SfcRequest, world: "World", now: int | None = None) -> "TaskResult":
    if world.scheme is not SchemeId.STATIC_CONFIG:
        raise ValueError("world was not built for the static-config scheme")
    return world.run_task(req, now)
