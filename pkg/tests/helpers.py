"""Small builders shared by the test modules."""

from __future__ import annotations

import random

from uavtrust.harness import build_domains, build_topology, TopologySpec
from uavtrust.model import DomainDescriptor, EsTopology, Hop, SfcRequest
from uavtrust.world import World, WorldParams


def line_domains(n: int, uavs: int = 3) -> list[DomainDescriptor]:
    return build_domains(TopologySpec(domains=n, uavs_per_domain=uavs))


def make_world(n: int = 3, uavs: int = 3, shape: str = "line", scheme="proposed",
               params: WorldParams | None = None, seed: int = 0, **kw) -> World:
    spec = TopologySpec(domains=n, uavs_per_domain=uavs, shape=shape)
    domains = build_domains(spec)
    params = params or WorldParams()
    topo = build_topology(spec, domains, params.latency.es_link_ms)
    return World(domains, topo, scheme, params, seed=seed, **kw)


def uav(d: int, j: int) -> str:
    return f"uav-D{d:02d}-{j:02d}"


def request(task_id: str, *placements: tuple[int, int], issued_at: int = 0) -> SfcRequest:
    """Request from (domain number, uav number) pairs."""
    hops = tuple(Hop(uav(d, j), f"D{d:02d}", f"f{k}") for k, (d, j) in enumerate(placements))
    return SfcRequest(task_id, hops, "gcs", issued_at)


def random_topology(rng: random.Random, n: int, max_lat: int = 15) -> EsTopology:
    """Connected random graph: a random spanning tree plus a few extra edges."""
    es = [f"es-D{i:02d}" for i in range(1, n + 1)]
    order = es[:]
    rng.shuffle(order)
    edges = {}
    for i in range(1, n):
        a, b = order[i], rng.choice(order[:i])
        edges[frozenset((a, b))] = rng.randint(1, max_lat)
    for _ in range(rng.randint(0, n)):
        a, b = rng.sample(es, 2) if n > 1 else (es[0], es[0])
        if a != b:
            edges.setdefault(frozenset((a, b)), rng.randint(1, max_lat))
    return EsTopology(frozenset(es), edges)


def random_request(rng: random.Random, task_id: str, domains: list[DomainDescriptor], length: int) -> SfcRequest:
    hops = []
    for k in range(length):
        d = rng.choice(domains)
        hops.append(Hop(rng.choice(sorted(d.uav_ids)), d.domain_id, f"f{k}"))
    return SfcRequest(task_id, tuple(hops))
