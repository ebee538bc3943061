"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

from __future__ import annotations

import dataclasses
import random
import time
from fractions import Fraction
from pathlib import Path

import pytest

from uavtrust import crypto
from uavtrust.crypto import KeyKind, SealedBox
from uavtrust.election import ElectionParams, centrality, coverage, filter_candidates, run_election
from uavtrust.harness import (
    BrokenChain,
    audit_dump,
    load_config,
    run_scenario,
    sweep_latency,
    sweep_throughput,
    write_run,
)
from uavtrust.ledger import ConsortiumLedger, LedgerError, LedgerRecord, RecordKind, dump_chain, load_dump
from uavtrust.model import EsTopology
from uavtrust.simnet import Crash, Kernel
from uavtrust.world import HcDelivery, SacDelivery, WorldParams

from helpers import line_domains, make_world, random_request, random_topology, request

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return emit


def _means(res, scheme, values):
    return [float(res.aggregate(scheme, v)["latency_mean_ms"]) for v in values]


@pytest.fixture(scope="module")
def latency_sweep():
    cfg = load_config(ROOT / "configs" / "latency.toml")
    assert cfg.replicas == 50
    start = time.monotonic()
    res = sweep_latency(cfg, [2, 4, 6, 8, 10])
    return res, time.monotonic() - start


def test_c1_latency_ordering(latency_sweep, report):
    res, took = latency_sweep
    lengths = [2, 4, 6, 8, 10]
    p, s, t = (_means(res, k, lengths) for k in ("proposed", "static-config", "centralized-ta"))
    ordered = all(a < b < c for a, b, c in zip(p, s, t))
    monotone = all(xs == sorted(xs) for xs in (p, s, t))
    detail = (f"P={[round(x) for x in p]} S={[round(x) for x in s]} TA={[round(x) for x in t]} "
              f"ordered={ordered} monotone={monotone} {took:.0f}s")
    report(1, ordered and monotone and took < 120, detail)


def test_c2_latency_stability(latency_sweep, report):
    res, _ = latency_sweep
    sp = float(res.aggregate("proposed", 6)["latency_stddev_ms"])
    ss = float(res.aggregate("static-config", 6)["latency_stddev_ms"])
    report(2, sp <= ss, f"stddev at length 6: proposed={sp:.1f} static={ss:.1f}")


def test_c3_throughput_saturation(report):
    cfg = load_config(ROOT / "configs" / "throughput.toml")
    counts = list(range(10, 101, 10))
    start = time.monotonic()
    res = sweep_throughput(cfg, counts)
    took = time.monotonic() - start
    tp = {k: [float(res.aggregate(k, c)["throughput_tps"]) for c in counts]
          for k in ("proposed", "static-config", "centralized-ta")}
    ordered = all(a >= b >= c for a, b, c in zip(tp["proposed"], tp["static-config"], tp["centralized-ta"]))
    i50, i100 = counts.index(50), counts.index(100)
    ta_growth = (tp["centralized-ta"][i100] - tp["centralized-ta"][i50]) / tp["centralized-ta"][i50]
    p_growth = (tp["proposed"][i100] - tp["proposed"][i50]) / tp["proposed"][i50]
    ok = ordered and ta_growth < 0.10 and p_growth > 0.25 and took < 300
    report(3, ok, f"ordered={ordered} ta_growth={ta_growth:+.3f} proposed_growth={p_growth:+.3f} {took:.0f}s")


def _election_instance(seed: int):
    rng = random.Random(seed)
    n = rng.randint(1, 8)
    doms = line_domains(n, uavs=rng.randint(1, 4))
    topo = random_topology(rng, n)
    req = random_request(rng, f"T{seed}", doms, rng.randint(1, 10))
    alpha = Fraction(rng.randint(0, 8), 8)
    return doms, topo, req, ElectionParams(alpha, 1 - alpha)


def _argmax(req, doms, topo, p):
    best = None
    for c in sorted(filter_candidates(req, doms)):
        s = p.alpha * centrality(c, req, topo, doms) + p.beta * coverage(c, req, doms)
        if best is None or s > best[0]:
            best = (s, c)
    return best[1]


def test_c4_election_oracle(report):
    mismatches = 0
    for seed in range(200):
        doms, topo, req, p = _election_instance(seed)
        if run_election(req, doms, topo, p).winner_es != _argmax(req, doms, topo, p):
            mismatches += 1
    doms = line_domains(3)
    topo = EsTopology.from_edges([d.es_id for d in doms], [("es-D01", "es-D02", 10), ("es-D02", "es-D03", 10)])
    fixture = centrality("es-D02", request("T", (1, 1), (2, 1), (2, 2), (3, 1)), topo, doms)
    report(4, mismatches == 0 and fixture == Fraction(3, 4),
           f"{200 - mismatches}/200 winners match; line centrality of es-D02 = {fixture}")


# protocol security -------------------------------------------------------------

def _attack_world(rng: random.Random, params: WorldParams | None = None, **kw):
    n = rng.randint(2, 5)
    w = make_world(n, uavs=3, shape=rng.choice(["line", "ring", "star"]), params=params,
                   seed=rng.randint(0, 10**6), **kw)
    req = random_request(rng, "T", w.domains, rng.randint(2, 7))
    return w, req


def _authorized_past(w, task_id, hop):
    return [a for a in w.tracker.authorizations if a.task_id == task_id and a.hop_index >= hop]


def _tamper_run(seed):
    rng = random.Random(seed)
    w, req = _attack_world(rng)
    hop = rng.randint(1, len(req.hops) - 1)
    pos = rng.random()

    def intercept(src, dst, msg):
        if isinstance(msg, HcDelivery) and msg.hc.hop_index == hop and dst == msg.target:
            raw = bytearray(msg.hc.sealed_body.ciphertext)
            raw[int(pos * len(raw))] ^= 1 << rng.randint(0, 7)
            return dataclasses.replace(msg, hc=dataclasses.replace(msg.hc, sealed_body=SealedBox(bytes(raw))))
        return msg

    w.kernel.interceptor = intercept
    w.submit(req, 0)
    w.run()
    return w, req, hop


def _late_run(seed):
    """Hold the credential for one hop back and deliver it after its freshness bound."""
    rng = random.Random(seed)
    w, req = _attack_world(rng, WorldParams(sac_ttl_ms=200))
    hop = rng.randint(0, len(req.hops) - 1)
    kind = SacDelivery if hop == 0 else HcDelivery
    held = []

    def intercept(src, dst, msg):
        if isinstance(msg, kind) and dst == msg.target and not held:
            if kind is SacDelivery or msg.hc.hop_index == hop:
                held.append(msg)
                late = (200 if kind is SacDelivery else w.delta_ms) + 1
                w.kernel.interceptor = None
                w.kernel.send(src, dst, msg, delay_ms=late)
                w.kernel.interceptor = intercept
                return None
        return msg

    w.kernel.interceptor = intercept
    w.submit(req, 0)
    w.run()
    return w, req, hop


def _impersonation_run(seed):
    rng = random.Random(seed)
    w, req = _attack_world(rng)
    hop = rng.randint(1, len(req.hops) - 1)
    rogue = crypto.keygen(crypto.derive_seed("rogue", seed), KeyKind.SIGNING)
    claim_other = rng.random() < 0.5

    def intercept(src, dst, msg):
        if isinstance(msg, HcDelivery) and msg.hc.hop_index == hop and dst == msg.target:
            hc = msg.hc
            if claim_other:
                # pose as a different, legitimate ES
                others = sorted(d.es_id for d in w.domains if d.es_id != hc.sender_es) or ["es-D99"]
                hc = dataclasses.replace(hc, sender_es=rng.choice(others))
            hc = dataclasses.replace(hc, domain_signature=crypto.sign(rogue, hc.signed_bytes()))
            return dataclasses.replace(msg, hc=hc)
        return msg

    w.kernel.interceptor = intercept
    w.submit(req, 0)
    w.run()
    return w, req, hop


def _unregistered_run(seed):
    rng = random.Random(seed)
    _, req = _attack_world(random.Random(seed))
    victim = rng.choice(sorted(req.uav_ids()))
    w, req = _attack_world(random.Random(seed), unregistered=[victim])
    w.submit(req, 0)
    w.run()
    return w, req, 0


def test_c5_protocol_security(report):
    failures = []
    expected = {"tamper": {"SignatureInvalid"}, "late": {"Stale", "Expired"},
                "impersonation": {"SignatureInvalid"}, "unregistered": {"Rejected"}}
    for name, fn in (("tamper", _tamper_run), ("late", _late_run), ("impersonation", _impersonation_run),
                     ("unregistered", _unregistered_run)):
        for seed in range(100):
            w, req, hop = fn(seed)
            (res,) = w.tracker.results()
            bad = _authorized_past(w, req.task_id, hop)
            if bad or res.status != "aborted" or res.reason not in expected[name] or w.tracker.violations:
                failures.append((name, seed, res.status, res.reason, hop, len(bad)))
    report(5, not failures, f"400 attack runs, {len(failures)} with authorizations past the attack point"
           + (f" first={failures[0]}" if failures else ""))


# ledger ------------------------------------------------------------------------

ES4 = ["es-1", "es-2", "es-3", "es-4"]


def _ledger(crashes=()):
    topo = EsTopology.from_edges(ES4, [(a, b, 10) for i, a in enumerate(ES4) for b in ES4[i + 1:]])
    k = Kernel(1, topology=topo, trace=False)
    led = ConsortiumLedger(k, ES4, host_nodes=True)
    k.apply_failures([Crash(c, 0) for c in crashes])
    k.run(0)
    return led


def _audit(i):
    return LedgerRecord.make(RecordKind.AUDIT_EVENT, {"task_id": f"T{i}", "op": "TaskEnd", "seq": 0}, i)


def test_c6_ledger_bft(report):
    led = _ledger(["es-4"])
    receipts = []
    for i in range(500):
        led.submit(_audit(i), ES4[i % 3], receipts.append)
    led.kernel.run()
    chains = {tuple(b.hash() for b in led.replica(e).state.chain) for e in ES4[:3]}
    committed = len(receipts) == 500 and len(chains) == 1

    # 50-block chain, single-bit flips over every byte of the dump
    big = _ledger()
    for i in range(49):
        big.commit(_audit(i), ES4[i % 4])
    big.kernel.run()
    raw = dump_chain(big.replica("es-2").state).encode()
    rng = random.Random(6)
    missed = 0
    for i in range(len(raw)):
        mutated = bytearray(raw)
        mutated[i] ^= 1 << rng.randint(0, 7)
        try:
            if load_dump(bytes(mutated)).broken is None:
                missed += 1
        except LedgerError:
            pass
    height = big.replica("es-2").state.height()

    rotations = set()
    for primary_first in range(5):
        led = _ledger(["es-1"])
        led.commit(_audit(primary_first), ES4[1 + primary_first % 3])
        led.kernel.run()
        rotations |= {led.replica(e).view for e in ES4[1:]}

    ok = committed and missed == 0 and height + 1 == 50 and rotations == {1}
    report(6, ok, f"500 commits on identical chains={committed}; {len(raw)} bit flips over {height + 1} blocks, "
                  f"{missed} undetected; views after primary crash={sorted(rotations)}")


def test_c7_resilience(report):
    cfg = load_config(ROOT / "configs" / "resilience.toml")
    out = {s.value: run_scenario(cfg, s).results for s in cfg.schemes}
    static_abort = sum(r.status == "aborted" for r in out["static-config"]) / len(out["static-config"])
    proposed_done = sum(r.status == "completed" for r in out["proposed"]) / len(out["proposed"])
    ta = run_scenario(load_config(ROOT / "configs" / "resilience-ta.toml")).results
    ta_abort = sum(r.status == "aborted" for r in ta) / len(ta)
    ok = static_abort == 1 and proposed_done >= 0.95 and ta_abort == 1
    report(7, ok, f"static aborted {static_abort:.0%}, proposed completed {proposed_done:.0%}, "
                  f"TA aborted {ta_abort:.0%}")


def test_c8_determinism(tmp_path, report):
    same = []
    for name in ("det-small", "det-failover", "det-ta-load"):
        cfg = load_config(FIXTURES / f"{name}.toml")
        a = write_run(run_scenario(cfg), tmp_path / name / "a")
        b = write_run(run_scenario(cfg), tmp_path / name / "b")
        same.append(all(a[k].read_bytes() == b[k].read_bytes() for k in a))
    report(8, all(same), f"byte-identical reruns: {same}")


def _trace_handovers(trace_lines, task_id):
    hops = []
    for line in trace_lines:
        _, _, actor, event, detail = line.split("\t")
        if event in ("sac.grant", "hc.grant"):
            f = dict(p.split("=", 1) for p in detail.split())
            if f["task"] == task_id:
                hops.append((int(f["hop"]), actor))
    return hops


def test_c9_audit_reconstruction(report):
    rng = random.Random(9)
    checked = mismatched = 0
    rejected = 0
    while checked < 20:
        w = make_world(rng.randint(2, 5), shape=rng.choice(["line", "ring"]), seed=rng.randint(0, 10**6))
        req = random_request(rng, f"T{checked:02d}", w.domains, rng.randint(1, 8))
        w.submit(req, 0)
        w.run()
        (res,) = w.tracker.results()
        if res.status != "completed":
            continue
        checked += 1
        dump = w.ledger.dump(w.ledger.es_ids[-1])
        rows = [ln.split() for ln in audit_dump(dump).splitlines()[1:]]
        audit = [(int(r[2].split("=")[1]), r[4].split("=")[1].split(",")[-1]) for r in rows
                 if r[1] in ("TaskStart", "Handover")]
        if audit != _trace_handovers(w.kernel.trace_lines, req.task_id):
            mismatched += 1
        raw = bytearray(dump.encode())
        raw[rng.randint(len(raw) // 3, len(raw) - 1)] ^= 0x01
        try:
            audit_dump(bytes(raw))
        except (BrokenChain, LedgerError):
            rejected += 1
    ok = mismatched == 0 and rejected == 20
    report(9, ok, f"{20 - mismatched}/20 audit timelines equal the trace; {rejected}/20 tampered dumps rejected")
