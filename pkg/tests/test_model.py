from __future__ import annotations

import itertools

import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from uavtrust.model import (
    DomainDescriptor,
    EsTopology,
    Hop,
    NodeIdentity,
    Role,
    SfcRequest,
    TopologyError,
    hop_weights,
    traversed_domains,
    validate_request,
)

from helpers import line_domains, random_topology, request
import random


def _req(domains_seq):
    hops = tuple(Hop(f"u{i}", d, "f") for i, d in enumerate(domains_seq))
    return SfcRequest("T", hops)


def test_single_hop_valid():
    doms = [DomainDescriptor("D1", "es1", frozenset({"u1"}))]
    req = SfcRequest("T1", (Hop("u1", "D1", "sense"),))
    assert validate_request(req, doms) == []


def test_membership_mismatch_reported():
    doms = [DomainDescriptor("D1", "es1", frozenset({"u1"})), DomainDescriptor("D2", "es2", frozenset({"u2"}))]
    req = SfcRequest("T1", (Hop("u1", "D2", "sense"),))
    assert validate_request(req, doms) == ["membership mismatch at hop 0"]


def test_five_hops_three_domains_valid():
    doms = line_domains(3)
    req = request("T", (1, 1), (1, 2), (2, 1), (3, 3), (2, 2))
    assert validate_request(req, doms) == []


def test_all_violations_listed():
    doms = line_domains(2)
    req = SfcRequest("", (Hop("uav-D01-01", "D02", "f"), Hop("x", "D09", "f")))
    out = validate_request(req, doms)
    assert "empty task_id" in out
    assert "membership mismatch at hop 0" in out
    assert "unknown domain D09 at hop 1" in out


def test_validate_needs_domains():
    with pytest.raises(ValueError):
        validate_request(request("T", (1, 1)), [])


def test_validate_is_order_insensitive_and_idempotent():
    doms = line_domains(4)
    req = request("T", (1, 1), (4, 2), (2, 3))
    bad = SfcRequest("T", (Hop("uav-D01-01", "D03", "f"),))
    for r in (req, bad):
        first = validate_request(r, doms)
        assert validate_request(r, list(reversed(doms))) == first
        assert validate_request(r, doms) == first


@pytest.mark.parametrize("seq,expected", [
    (["D1"], ["D1"]),
    (["D1", "D1", "D2", "D1", "D3"], ["D1", "D2", "D3"]),
    (["D2", "D3", "D2"], ["D2", "D3"]),
])
def test_traversed_domains(seq, expected):
    assert traversed_domains(_req(seq)) == expected


@given(st.lists(st.sampled_from(["D1", "D2", "D3", "D4", "D5"]), min_size=1, max_size=12))
def test_traversed_matches_set_scan(seq):
    out = traversed_domains(_req(seq))
    scan = []
    for d in seq:
        if d not in scan:
            scan.append(d)
    assert out == scan
    assert len(out) <= len(seq)
    assert sum(hop_weights(_req(seq)).values()) == len(seq)


def test_identity_roundtrip():
    ident = NodeIdentity("u1", Role.UAV, "D1", b"\x01" * 32, b"\x02" * 32)
    assert NodeIdentity.from_dict(ident.to_dict()) == ident


def test_request_roundtrip():
    req = request("T9", (1, 1), (2, 2), issued_at=17)
    assert SfcRequest.from_dict(req.to_dict()) == req


def test_topology_rejects_bad_links():
    with pytest.raises(TopologyError):
        EsTopology.from_edges(["a", "b"], [("a", "b", 0)])
    with pytest.raises(TopologyError):
        EsTopology.from_edges(["a"], [("a", "z", 3)])


def test_disconnected_distance_raises():
    topo = EsTopology.from_edges(["a", "b", "c"], [("a", "b", 1)])
    assert not topo.is_connected()
    with pytest.raises(TopologyError):
        topo.hop_distance("a", "c")


def test_every_traversed_domain_has_one_es():
    doms = line_domains(5)
    req = request("T", (2, 1), (5, 1), (2, 2))
    es_of = {}
    for d in doms:
        assert d.domain_id not in es_of
        es_of[d.domain_id] = d.es_id
    assert all(d in es_of for d in traversed_domains(req))


def _as_nx(topo: EsTopology) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(topo.es_ids)
    for pair, lat in topo.links.items():
        a, b = tuple(pair)
        g.add_edge(a, b, weight=lat)
    return g


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_distances_match_networkx(seed, n):
    topo = random_topology(random.Random(seed), n)
    g = _as_nx(topo)
    hops = dict(nx.all_pairs_shortest_path_length(g))
    lat = dict(nx.all_pairs_dijkstra_path_length(g))
    for a, b in itertools.product(sorted(topo.es_ids), repeat=2):
        assert topo.hop_distance(a, b) == hops[a][b]
        assert topo.hop_distance(a, b) == topo.hop_distance(b, a)
        assert topo.path_latency(a, b) == lat[a][b]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8))
def test_hop_distance_triangle_inequality(seed, n):
    topo = random_topology(random.Random(seed), n)
    ids = sorted(topo.es_ids)
    for a, b, c in itertools.product(ids, repeat=3):
        assert topo.hop_distance(a, c) <= topo.hop_distance(a, b) + topo.hop_distance(b, c)
