"""Shared domain types: identities, domains, SFC requests and the ES backbone."""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence


class Role(str, Enum):
    UAV = "UAV"
    EDGE_SERVER = "EdgeServer"
    TRUSTED_AUTHORITY = "TrustedAuthority"


class Status(str, Enum):
    REGISTERED = "Registered"
    REVOKED = "Revoked"


@dataclass(frozen=True)
class NodeIdentity:
    id: str
    role: Role
    domain_id: str | None
    verify_key: bytes
    seal_key: bytes
    status: Status = Status.REGISTERED

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "role": self.role.value,
            "domain_id": self.domain_id,
            "verify_key": self.verify_key.hex(),
            "seal_key": self.seal_key.hex(),
            "status": self.status.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NodeIdentity":
        return cls(
            id=d["id"],
            role=Role(d["role"]),
            domain_id=d.get("domain_id"),
            verify_key=bytes.fromhex(d["verify_key"]),
            seal_key=bytes.fromhex(d["seal_key"]),
            status=Status(d.get("status", Status.REGISTERED.value)),
        )


@dataclass(frozen=True)
class DomainDescriptor:
    domain_id: str
    es_id: str
    uav_ids: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Hop:
    uav_id: str
    domain_id: str
    function_tag: str


@dataclass(frozen=True)
class SfcRequest:
    task_id: str
    hops: tuple[Hop, ...]
    requester_id: str = "gcs"
    issued_at: int = 0

    def uav_ids(self) -> list[str]:
        return [h.uav_id for h in self.hops]

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "hops": [[h.uav_id, h.domain_id, h.function_tag] for h in self.hops],
            "requester_id": self.requester_id,
            "issued_at": self.issued_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SfcRequest":
        return cls(
            task_id=d["task_id"],
            hops=tuple(Hop(*h) for h in d["hops"]),
            requester_id=d.get("requester_id", "gcs"),
            issued_at=int(d.get("issued_at", 0)),
        )


def validate_request(req: SfcRequest, domains: Iterable[DomainDescriptor]) -> list[str]:
    """Return membership violations for ``req``; an empty list means valid.

    Violations are reported, not raised, so callers can show all of them.
    """
    domains = list(domains)
    if not domains:
        raise ValueError("validate_request needs at least one domain")
    by_id = {d.domain_id: d for d in domains}
    problems = []
    if not req.task_id:
        problems.append("empty task_id")
    if not req.hops:
        problems.append("request has no hops")
    for i, hop in enumerate(req.hops):
        dom = by_id.get(hop.domain_id)
        if dom is None:
            problems.append(f"unknown domain {hop.domain_id} at hop {i}")
        elif hop.uav_id not in dom.uav_ids:
            problems.append(f"membership mismatch at hop {i}")
    return problems


def traversed_domains(req: SfcRequest) -> list[str]:
    """Domain ids of ``req`` in first-appearance order, without duplicates."""
    return list(dict.fromkeys(h.domain_id for h in req.hops))


def hop_weights(req: SfcRequest) -> dict[str, int]:
    """Number of hops assigned to each traversed domain."""
    weights: dict[str, int] = {}
    for h in req.hops:
        weights[h.domain_id] = weights.get(h.domain_id, 0) + 1
    return weights


class TopologyError(ValueError):
    pass


@dataclass
class EsTopology:
    """Undirected ES backbone with per-link one-way latency in ms."""

    es_ids: frozenset[str]
    links: dict[frozenset, int] = field(default_factory=dict)

    def __post_init__(self):
        self._adj: dict[str, dict[str, int]] = {e: {} for e in self.es_ids}
        for pair, lat in self.links.items():
            a, b = tuple(pair)
            if a not in self._adj or b not in self._adj:
                raise TopologyError(f"link {a}-{b} names an unknown ES")
            if lat <= 0:
                raise TopologyError(f"link {a}-{b} latency must be positive")
            self._adj[a][b] = lat
            self._adj[b][a] = lat
        self._hops: dict[str, dict[str, int]] = {}
        self._lat: dict[str, dict[str, int]] = {}

    @classmethod
    def from_edges(cls, es_ids: Iterable[str], edges: Iterable[tuple[str, str, int]]) -> "EsTopology":
        return cls(frozenset(es_ids), {frozenset((a, b)): int(lat) for a, b, lat in edges})

    def neighbours(self, es: str) -> dict[str, int]:
        return self._adj[es]

    def _bfs(self, src: str) -> dict[str, int]:
        dist = {src: 0}
        q = deque([src])
        while q:
            u = q.popleft()
            for v in self._adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    q.append(v)
        return dist

    def _dijkstra(self, src: str) -> dict[str, int]:
        dist = {src: 0}
        heap = [(0, src)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for v, w in self._adj[u].items():
                nd = d + w
                if nd < dist.get(v, nd + 1):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return dist

    def hop_distance(self, a: str, b: str) -> int:
        if a not in self._hops:
            self._hops[a] = self._bfs(a)
        try:
            return self._hops[a][b]
        except KeyError:
            raise TopologyError(f"{b} unreachable from {a}") from None

    def path_latency(self, a: str, b: str) -> int:
        if a not in self._lat:
            self._lat[a] = self._dijkstra(a)
        try:
            return self._lat[a][b]
        except KeyError:
            raise TopologyError(f"{b} unreachable from {a}") from None

    def is_connected(self) -> bool:
        if not self.es_ids:
            return True
        start = min(self.es_ids)
        return len(self._bfs(start)) == len(self.es_ids)

    def max_link_latency(self) -> int:
        return max(self.links.values(), default=0)

    def diameter_latency(self, among: Sequence[str] | None = None) -> int:
        """Largest shortest-path latency between any two ESs in ``among``."""
        nodes = sorted(among if among is not None else self.es_ids)
        best = 0
        for i, a in enumerate(nodes):
            for b in nodes[i + 1:]:
                best = max(best, self.path_latency(a, b))
        return best
