from __future__ import annotations

import statistics
from pathlib import Path

import pytest

from uavtrust import cli
from uavtrust.errors import ConfigError
from uavtrust.harness import (
    METRICS_COLUMNS,
    TASK_COLUMNS,
    BrokenChain,
    audit_dump,
    config_from_dict,
    fmt,
    load_config,
    parse_range,
    read_csv,
    run_scenario,
    sweep_latency,
    write_run,
)
from uavtrust.ledger import LedgerError
from uavtrust.world import World

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = Path(__file__).resolve().parent / "fixtures"


def small(**over) -> dict:
    raw = {
        "seed": 3,
        "schemes": ["proposed"],
        "topology": {"domains": 3, "uavs_per_domain": 3},
        "workload": {"rate_per_s": 5.0, "tasks": 6, "sfc_length": 3},
    }
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(raw.get(k), dict):
            raw[k] = {**raw[k], **v}
        else:
            raw[k] = v
    return raw


@pytest.mark.parametrize("raw,field", [
    ({"bogus": 1}, "bogus"),
    ({"format": "other/2"}, "format"),
    ({"topology": {"shape": "blob"}}, "topology.shape"),
    ({"topology": {"domains": 0}}, "topology.domains"),
    ({"election": {"alpha": 0.7, "beta": 0.7}}, "election.alpha"),
    ({"election": {"alpha": "x"}}, "election.alpha"),
    ({"latency": {"proc_costs": {"teleport": 1}}}, "latency.proc_costs.teleport"),
    ({"latency": {"intra_domain_ms": "fast"}}, "latency.intra_domain_ms"),
    ({"workload": {"sfc_length": 0}}, "workload.sfc_length"),
    ({"workload": {"arrival": "bursty"}}, "workload.arrival"),
    ({"workload": {"exclude_domains": ["D77"]}}, "workload.exclude_domains"),
    ({"failures": [{"node": "es-D09", "crash_at": 1}]}, "failures[0].node"),
    ({"unregistered": ["uav-D01-99"]}, "unregistered"),
    ({"protocol": {"fixed_orchestrator": "es-D42"}}, "protocol.fixed_orchestrator"),
    ({"metrics": {"window_ms": 0}}, "metrics.window_ms"),
    ({"replicas": 0}, "replicas"),
])
def test_config_errors_name_the_field(raw, field):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(small(**raw))
    assert exc.value.field == field


def test_config_defaults_and_auto():
    cfg = config_from_dict({})
    assert cfg.world.election.window_ms is None
    assert cfg.world.delta_ms is None
    assert cfg.metrics.warmup_ms == 10_000 and cfg.metrics.window_ms == 60_000
    assert cfg.replica_seeds() == [1]


def test_shipped_configs_load():
    for p in sorted((ROOT / "configs").glob("*.toml")) + sorted(FIXTURES.glob("*.toml")):
        load_config(p)


def test_load_config_bad_file(tmp_path):
    p = tmp_path / "x.toml"
    p.write_text("seed = [")
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert exc.value.field == "file"


def test_window_below_requirement_is_config_error():
    cfg = config_from_dict(small(election={"window_ms": 1}))
    with pytest.raises(ConfigError) as exc:
        run_scenario(cfg)
    assert exc.value.field == "election.window_ms"


def test_zero_rate_runs_clean(tmp_path):
    cfg = config_from_dict(small(workload={"rate_per_s": 0.0}))
    out = run_scenario(cfg)
    assert out.results == [] and out.latencies() == [] and out.throughput() == 0
    paths = write_run(out, tmp_path)
    rows = read_csv(paths["metrics"].read_bytes().decode())
    assert rows[0]["tasks"] == "0" and rows[0]["latency_mean_ms"] == ""
    assert read_csv(paths["tasks"].read_bytes().decode()) == []


def test_one_hop_latency_equals_hand_trace():
    cfg = config_from_dict(small(workload={"arrival": "fixed", "tasks": 1, "sfc_length": 1}))
    out = run_scenario(cfg)
    (res,) = out.results
    lm = cfg.world.latency
    # single candidate: zero window; orchestration job; ES -> UAV; verify and open
    expected = 0 + (lm.cost("ledger_read") + lm.cost("seal") + lm.cost("sign")) + lm.intra_domain_ms \
        + lm.cost("verify") + lm.cost("open")
    assert expected == 8
    assert res.latency_ms == expected


def test_same_seed_same_bytes(tmp_path):
    cfg = config_from_dict(small())
    a = write_run(run_scenario(cfg), tmp_path / "a")
    b = write_run(run_scenario(cfg), tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()
    c = write_run(run_scenario(cfg, seed=4), tmp_path / "c")
    assert c["trace"].read_bytes() != a["trace"].read_bytes()


def test_csv_header_lines_are_stable(tmp_path):
    paths = write_run(run_scenario(config_from_dict(small())), tmp_path)
    m = paths["metrics"].read_bytes().split(b"\r\n")
    t = paths["tasks"].read_bytes().split(b"\r\n")
    assert m[0] == b"#format=uavtrust-metrics/1"
    assert m[1] == b"kind,scheme,sweep,value,seed,tasks,completed,aborted,latency_mean_ms,latency_stddev_ms," \
                   b"throughput_tps"
    assert t[0] == b"#format=uavtrust-tasks/1"
    assert t[1] == b"scheme,sweep,value,seed,task_id,hops,status,reason,initiated_at,completed_at,latency_ms," \
                   b"orchestrator,elections"
    assert m[1].decode().split(",") == METRICS_COLUMNS
    assert t[1].decode().split(",") == TASK_COLUMNS


def test_sweep_shape_and_aggregate_recompute():
    cfg = config_from_dict(small(replicas=3, schemes=["static-config"]))
    res = sweep_latency(cfg, [2])
    rows = read_csv(res.metrics_csv())
    assert [r["kind"] for r in rows] == ["replica"] * 3 + ["aggregate"]
    tasks = read_csv(res.tasks_csv())
    lat = [int(t["latency_ms"]) for t in tasks if t["latency_ms"]]
    agg = rows[-1]
    assert agg["latency_mean_ms"] == fmt(statistics.fmean(lat))
    assert agg["latency_stddev_ms"] == fmt(statistics.stdev(lat))
    assert agg["throughput_tps"] == fmt(statistics.fmean(float(r["throughput_tps"]) for r in rows[:3]))
    assert int(agg["completed"]) == len(lat)
    assert res.aggregate("static-config", 2) == res.rows[-1]


def test_sweep_values_must_ascend():
    cfg = config_from_dict(small())
    with pytest.raises(ConfigError):
        sweep_latency(cfg, [4, 2])
    with pytest.raises(ConfigError):
        sweep_latency(cfg, [])


def test_schemes_see_identical_requests(monkeypatch):
    seen: dict[str, list] = {}
    orig = World.submit

    def spy(self, req, at=None):
        seen.setdefault(self.scheme.value, []).append((req, at))
        return orig(self, req, at)

    monkeypatch.setattr(World, "submit", spy)
    cfg = config_from_dict(small(schemes=["proposed", "static-config", "centralized-ta"]))
    for s in cfg.schemes:
        run_scenario(cfg, s)
    assert seen["proposed"] == seen["static-config"] == seen["centralized-ta"]


def test_closed_loop_keeps_concurrency():
    out = run_scenario(load_config(FIXTURES / "det-ta-load.toml"))
    assert len(out.results) == 30
    assert all(r.status == "completed" for r in out.results)


def test_parse_range():
    assert parse_range("2,4,6") == [2, 4, 6]
    assert parse_range("10:100:10") == list(range(10, 101, 10))
    assert parse_range("1:3") == [1, 2, 3]
    with pytest.raises(ConfigError):
        parse_range("a:b")


def _three_hop_dump():
    cfg = config_from_dict(small(workload={"arrival": "fixed", "tasks": 1, "sfc_length": 3}))
    return run_scenario(cfg).ledger_dump()


def test_audit_dump_three_hop_task():
    text = audit_dump(_three_hop_dump())
    lines = text.splitlines()
    assert lines[0] == "task T000001"
    assert [ln.split()[1] for ln in lines[1:]] == ["TaskStart", "Handover", "Handover", "TaskEnd"]


def test_audit_dump_empty_ledger():
    cfg = config_from_dict(small(workload={"rate_per_s": 0.0}))
    assert audit_dump(run_scenario(cfg).ledger_dump()) == "no tasks\n"


def test_audit_dump_tampered():
    raw = _three_hop_dump()
    lines = raw.split("\n")
    lines[1] = lines[1].replace('"committed_at":0', '"committed_at":1')
    with pytest.raises(BrokenChain) as exc:
        audit_dump("\n".join(lines))
    assert exc.value.height == 1
    with pytest.raises(LedgerError):
        audit_dump(raw[:-1])


def test_cli_run_and_audit(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["run", "--config", str(FIXTURES / "det-small.toml"), "--seed", "42", "--scheme", "proposed",
                     "--out", str(out)]) == 0
    for name in ("metrics.csv", "tasks.csv", "trace.tsv", "ledger.txt"):
        assert (out / name).exists()
    capsys.readouterr()
    assert cli.main(["audit-dump", "--ledger", str(out / "ledger.txt")]) == 0
    assert capsys.readouterr().out.startswith("task T000001\n")

    raw = bytearray((out / "ledger.txt").read_bytes())
    raw[len(raw) // 2] ^= 0x01
    bad = tmp_path / "bad.txt"
    bad.write_bytes(bytes(raw))
    assert cli.main(["audit-dump", "--ledger", str(bad)]) == 3
    err = capsys.readouterr().err
    assert err.startswith("error\tBrokenAt\t")


def test_cli_config_error_line(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text('[topology]\nshape = "blob"\n')
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert capsys.readouterr().err.startswith("error\tConfigError\ttopology.shape\t")


def test_cli_sweep(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text('seed = 2\nschemes = ["proposed"]\n[topology]\ndomains = 3\nuavs_per_domain = 2\n'
                 '[workload]\ntasks = 3\n')
    assert cli.main(["sweep-latency", "--config", str(p), "--lengths", "1,2", "--replicas", "2",
                     "--out", str(tmp_path / "s")]) == 0
    rows = read_csv((tmp_path / "s" / "latency.csv").read_bytes().decode())
    assert len(rows) == 2 * (2 + 1)
    assert cli.main(["sweep-throughput", "--config", str(p), "--uavs", "4:6:2", "--replicas", "1",
                     "--out", str(tmp_path / "t")]) == 0
    assert cli.main(["sweep-throughput", "--config", str(p), "--uavs", "5", "--out", str(tmp_path / "t")]) == 2
