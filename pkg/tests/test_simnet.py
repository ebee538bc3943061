from __future__ import annotations

import pytest

from uavtrust.model import EsTopology, Role
from uavtrust.simnet import (
    TRACE_HEADER,
    Crash,
    FailureScript,
    Kernel,
    LatencyModel,
    NoSuchEvent,
    RunawaySimulation,
    Server,
)


class Recorder:
    def __init__(self, kernel, name):
        self.kernel = kernel
        self.name = name
        self.seen = []

    def on_message(self, src, msg):
        self.seen.append((self.kernel.now, src, msg))
        self.kernel.trace(self.name, "recv", f"from={src} msg={msg}")

    def on_timer(self, timer):
        self.seen.append((self.kernel.now, "timer", timer.kind))


def _kernel(**kw):
    k = Kernel(seed=kw.pop("seed", 1), **kw)
    nodes = {}
    for nid, role, dom in [("u1", Role.UAV, "D1"), ("u2", Role.UAV, "D1"), ("u3", Role.UAV, "D2"),
                           ("es1", Role.EDGE_SERVER, "D1"), ("es2", Role.EDGE_SERVER, "D2")]:
        nodes[nid] = Recorder(k, nid)
        k.add_node(nid, nodes[nid], role, dom)
    return k, nodes


def test_zero_delay_fires_after_earlier_same_time_events():
    k, n = _kernel()
    k.schedule(0, "u1", "first")
    k.schedule(0, "u1", "second")
    k.run()
    assert [m for _, _, m in n["u1"].seen] == ["first", "second"]
    assert all(t == 0 for t, _, _ in n["u1"].seen)


def test_fires_at_now_plus_delay():
    k, n = _kernel()
    k.schedule(7, "u1", "x")
    k.schedule(3, "u1", "y")
    k.run()
    assert [(t, m) for t, _, m in n["u1"].seen] == [(3, "y"), (7, "x")]


def test_cancel_suppresses_delivery_and_late_cancel_raises():
    k, n = _kernel()
    eid = k.schedule(5, "u1", "gone")
    k.cancel(eid)
    k.run()
    assert n["u1"].seen == []
    eid = k.schedule(1, "u1", "x")
    k.run()
    with pytest.raises(NoSuchEvent):
        k.cancel(eid)


def test_negative_delay_rejected():
    k, _ = _kernel()
    with pytest.raises(ValueError):
        k.schedule(-1, "u1", "x")


def test_link_latencies():
    topo = EsTopology.from_edges(["es1", "es2"], [("es1", "es2", 10)])
    k, n = _kernel(topology=topo)
    k.send("u1", "es1", "a")   # same domain
    k.send("u1", "u3", "b")    # cross domain
    k.send("es1", "es2", "c")  # backbone
    k.run()
    assert n["es1"].seen[0][0] == 2
    assert n["u3"].seen[0][0] == 20
    assert n["es2"].seen[0][0] == 10


def test_latency_model_validation():
    with pytest.raises(ValueError):
        LatencyModel(intra_domain_ms=30, inter_domain_ms=20)
    with pytest.raises(ValueError):
        LatencyModel(proc_costs={"sign": -1})
    assert LatencyModel(es_link_ms=7).cost("consensus_phase") == 7


def test_crashed_destination_drops():
    k, n = _kernel()
    k.apply_failures(FailureScript.of(("u2", 0)))
    k.schedule(1, "u1", "tick")
    k.run()
    k.send("u1", "u2", "hello")
    k.run()
    assert n["u2"].seen == []
    assert "msg.drop" in k.trace_text()


def test_crashed_sender_sends_nothing():
    k, n = _kernel()
    k.apply_failures([Crash("u1", 0, 50)])
    k.run(10)
    assert k.send("u1", "u2", "x") is None
    k.run()
    assert k.is_live("u1")
    k.send("u1", "u2", "y")
    k.run()
    assert [m for _, _, m in n["u2"].seen] == ["y"]


def test_per_channel_fifo():
    k, n = _kernel()
    for i in range(20):
        k.send("u1", "u3", i)
    k.run()
    assert [m for _, _, m in n["u3"].seen] == list(range(20))


def test_empty_run_returns_now():
    k, _ = _kernel()
    assert k.run() == 0
    assert k.run(until=40) == 40


def test_runaway_limit():
    k = Kernel(max_events=50)

    class Loop:
        def on_message(self, src, msg):
            k.schedule(1, "x", msg)

        def on_timer(self, t):
            pass

    k.add_node("x", Loop(), Role.UAV, "D1")
    k.schedule(0, "x", "go")
    with pytest.raises(RunawaySimulation):
        k.run()


def test_clock_never_decreases():
    k, n = _kernel()
    for d in (5, 1, 9, 0, 3, 3):
        k.schedule(d, "u1", d)
    times = []
    while k.step():
        times.append(k.now)
    assert times == sorted(times)


def test_server_runs_jobs_one_at_a_time():
    k = Kernel()
    done = []

    class Owner:
        def on_message(self, src, msg):
            pass

        def on_timer(self, timer):
            s, fn = timer.data
            s.finish(fn)

    k.add_node("o", Owner(), Role.EDGE_SERVER, "D1")
    srv = Server(k, "o", "q")
    for i in range(3):
        srv.submit(4, lambda i=i: done.append((i, k.now)))
    k.run()
    assert done == [(0, 4), (1, 8), (2, 12)]


def _random_arrivals(seed):
    k, n = _kernel(seed=seed)
    for i in range(10):
        k.send("u1", "u3", i, delay_ms=k.rng.randint(0, 100))
    k.run()
    return k.trace_text()


def test_trace_determinism_and_seed_sensitivity():
    a, b = _random_arrivals(42), _random_arrivals(42)
    assert a == b
    assert a.startswith(TRACE_HEADER + "\n")
    assert _random_arrivals(43) != a


def test_entropy_reproducible():
    assert Kernel(seed=3).entropy("x") == Kernel(seed=3).entropy("x")
    k = Kernel(seed=3)
    assert k.entropy("x") != k.entropy("x")
