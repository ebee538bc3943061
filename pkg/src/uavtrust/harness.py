"""Scenario configs, workload generation, sweeps and result files."""

from __future__ import annotations

import csv
import io
import logging
import math
import random
import statistics
import sys
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .baselines import TA_ID, SchemeId
from .election import ElectionParams
from .errors import ConfigError
from .ledger import LedgerError, load_dump
from .model import DomainDescriptor, EsTopology, Hop, SfcRequest
from .protocol import reconstruct_timelines
from .simnet import DEFAULT_PROC_COSTS, Crash, FailureScript, LatencyModel
from .world import TaskResult, World, WorldParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

CONFIG_FORMAT = "uavtrust-scenario/1"
METRICS_HEADER = "#format=uavtrust-metrics/1"
TASKS_HEADER = "#format=uavtrust-tasks/1"
METRICS_COLUMNS = ["kind", "scheme", "sweep", "value", "seed", "tasks", "completed", "aborted",
                   "latency_mean_ms", "latency_stddev_ms", "throughput_tps"]
TASK_COLUMNS = ["scheme", "sweep", "value", "seed", "task_id", "hops", "status", "reason", "initiated_at",
                "completed_at", "latency_ms", "orchestrator", "elections"]
SHAPES = ("line", "ring", "star", "full", "explicit")


# config ----------------------------------------------------------------------

@dataclass
class TopologySpec:
    domains: int = 5
    uavs_per_domain: int = 4
    shape: str = "line"
    links: list[tuple[str, str, int]] = field(default_factory=list)  # shape = "explicit"


@dataclass
class WorkloadSpec:
    arrival: str = "poisson"  # poisson | fixed | closed
    rate_per_s: float = 2.0  # total offered load
    rate_per_uav_per_s: float | None = None  # overrides rate_per_s when set
    tasks: int | None = 20  # stop after this many arrivals
    duration_ms: int | None = None  # or stop at this time
    concurrency: int = 1  # closed loop requesters
    think_ms: int = 0
    sfc_length: int | tuple[int, int] = 5
    placement: str = "uniform"  # uniform | walk
    exclude_domains: list[str] = field(default_factory=list)


@dataclass
class MetricsSpec:
    warmup_ms: int = 10_000
    window_ms: int = 60_000
    run_until: str = "quiescence"  # quiescence | window


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 1
    replicas: int = 1
    schemes: list[SchemeId] = field(default_factory=lambda: list(SchemeId))
    topology: TopologySpec = field(default_factory=TopologySpec)
    world: WorldParams = field(default_factory=WorldParams)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    metrics: MetricsSpec = field(default_factory=MetricsSpec)
    failures: list[Crash] = field(default_factory=list)
    unregistered: list[str] = field(default_factory=list)
    trace: bool = True

    def replica_seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.replicas)]


def _take(section: Mapping, key: str, path: str, kind, default):
    if key not in section:
        return default
    val = section[key]
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ConfigError(f"{path}.{key}", "expected an integer")
    if kind is float and (isinstance(val, bool) or not isinstance(val, (int, float))):
        raise ConfigError(f"{path}.{key}", "expected a number")
    if kind is str and not isinstance(val, str):
        raise ConfigError(f"{path}.{key}", "expected a string")
    if kind is bool and not isinstance(val, bool):
        raise ConfigError(f"{path}.{key}", "expected true or false")
    return float(val) if kind is float else val


def _auto_int(section: Mapping, key: str, path: str, default=None):
    val = section.get(key, "auto")
    if val == "auto":
        return default
    if isinstance(val, bool) or not isinstance(val, int) or val < 0:
        raise ConfigError(f"{path}.{key}", "expected a non-negative integer or \"auto\"")
    return val


def _fraction(val, path: str) -> Fraction:
    try:
        if isinstance(val, float):
            return Fraction(str(val))
        return Fraction(val)
    except (TypeError, ValueError, ZeroDivisionError):
        raise ConfigError(path, "expected a number or a fraction such as \"1/2\"") from None


_SECTIONS = {"format", "name", "seed", "replicas", "schemes", "trace", "topology", "latency", "election",
             "protocol", "ledger", "workload", "metrics", "failures", "unregistered"}


def config_from_dict(raw: Mapping[str, Any]) -> ScenarioConfig:
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    fmt = raw.get("format", CONFIG_FORMAT)
    if fmt != CONFIG_FORMAT:
        raise ConfigError("format", f"expected {CONFIG_FORMAT!r}")
    cfg = ScenarioConfig()
    cfg.name = _take(raw, "name", "", str, cfg.name)
    cfg.seed = _take(raw, "seed", "", int, cfg.seed)
    cfg.replicas = _take(raw, "replicas", "", int, cfg.replicas)
    if cfg.replicas < 1:
        raise ConfigError("replicas", "must be >= 1")
    cfg.trace = _take(raw, "trace", "", bool, True)
    if "schemes" in raw:
        try:
            cfg.schemes = [SchemeId.parse(s) for s in raw["schemes"]]
        except (ValueError, TypeError) as exc:
            raise ConfigError("schemes", str(exc)) from None
        if not cfg.schemes:
            raise ConfigError("schemes", "list is empty")

    t = raw.get("topology", {})
    topo = TopologySpec(
        domains=_take(t, "domains", "topology", int, 5),
        uavs_per_domain=_take(t, "uavs_per_domain", "topology", int, 4),
        shape=_take(t, "shape", "topology", str, "line"),
    )
    if topo.shape not in SHAPES:
        raise ConfigError("topology.shape", f"expected one of {', '.join(SHAPES)}")
    if topo.domains < 1:
        raise ConfigError("topology.domains", "must be >= 1")
    if topo.uavs_per_domain < 1:
        raise ConfigError("topology.uavs_per_domain", "must be >= 1")
    if topo.shape == "explicit":
        try:
            topo.links = [(str(a), str(b), int(lat)) for a, b, lat in t.get("links", [])]
        except (TypeError, ValueError):
            raise ConfigError("topology.links", "expected [es, es, latency_ms] triples") from None
    cfg.topology = topo

    lat = raw.get("latency", {})
    costs = dict(lat.get("proc_costs", {}))
    for k, v in costs.items():
        if k not in DEFAULT_PROC_COSTS:
            raise ConfigError(f"latency.proc_costs.{k}", "unknown operation")
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"latency.proc_costs.{k}", "expected an integer")
    links = dict(
        intra_domain_ms=_take(lat, "intra_domain_ms", "latency", int, 2),
        inter_domain_ms=_take(lat, "inter_domain_ms", "latency", int, 20),
        es_link_ms=_take(lat, "es_link_ms", "latency", int, 10),
        ta_link_ms=_take(lat, "ta_link_ms", "latency", int, 30),
    )
    try:
        latency = LatencyModel(proc_costs=costs, **links)
    except ValueError as exc:
        raise ConfigError("latency", str(exc)) from None

    el = raw.get("election", {})
    alpha = _fraction(el.get("alpha", "1/2"), "election.alpha")
    beta = _fraction(el.get("beta", 1 - alpha), "election.beta")
    election = ElectionParams(alpha, beta, _auto_int(el, "window_ms", "election"))

    pr = raw.get("protocol", {})
    led = raw.get("ledger", {})
    fixed = pr.get("fixed_orchestrator", "auto")
    cfg.world = WorldParams(
        latency=latency,
        election=election,
        sac_ttl_ms=_take(pr, "sac_ttl_ms", "protocol", int, 60_000),
        delta_ms=_auto_int(pr, "delta_ms", "protocol"),
        task_timeout_ms=_auto_int(pr, "task_timeout_ms", "protocol"),
        batch_size=_take(led, "batch_size", "ledger", int, 1),
        batch_timeout_ms=_take(led, "batch_timeout_ms", "ledger", int, 0),
        view_timeout_ms=_auto_int(led, "view_timeout_ms", "ledger"),
        fixed_orchestrator=None if fixed == "auto" else str(fixed),
        per_hop_es_check=_take(pr, "per_hop_es_check", "protocol", bool, False),
    )
    if cfg.world.sac_ttl_ms <= 0:
        raise ConfigError("protocol.sac_ttl_ms", "must be > 0")
    if cfg.world.batch_size < 1:
        raise ConfigError("ledger.batch_size", "must be >= 1")

    w = raw.get("workload", {})
    length = w.get("sfc_length", 5)
    if isinstance(length, list):
        if len(length) != 2 or not all(isinstance(x, int) and x >= 1 for x in length) or length[0] > length[1]:
            raise ConfigError("workload.sfc_length", "expected an integer or [min, max]")
        length = (length[0], length[1])
    elif isinstance(length, bool) or not isinstance(length, int) or length < 1:
        raise ConfigError("workload.sfc_length", "must be a positive integer")
    rpu = w.get("rate_per_uav_per_s")
    wl = WorkloadSpec(
        arrival=_take(w, "arrival", "workload", str, "poisson"),
        rate_per_s=_take(w, "rate_per_s", "workload", float, 2.0),
        rate_per_uav_per_s=None if rpu is None else _take(w, "rate_per_uav_per_s", "workload", float, None),
        tasks=_auto_int(w, "tasks", "workload") if "tasks" in w else 20,
        duration_ms=_auto_int(w, "duration_ms", "workload"),
        concurrency=_take(w, "concurrency", "workload", int, 1),
        think_ms=_take(w, "think_ms", "workload", int, 0),
        sfc_length=length,
        placement=_take(w, "placement", "workload", str, "uniform"),
        exclude_domains=list(w.get("exclude_domains", [])),
    )
    if wl.arrival not in ("poisson", "fixed", "closed"):
        raise ConfigError("workload.arrival", "expected poisson, fixed or closed")
    if wl.placement not in ("uniform", "walk"):
        raise ConfigError("workload.placement", "expected uniform or walk")
    if wl.rate_per_s < 0 or (wl.rate_per_uav_per_s is not None and wl.rate_per_uav_per_s < 0):
        raise ConfigError("workload.rate_per_s", "must be >= 0")
    if wl.tasks is None and wl.duration_ms is None:
        raise ConfigError("workload.duration_ms", "set tasks or duration_ms")
    if wl.duration_ms is not None and wl.duration_ms <= 0:
        raise ConfigError("workload.duration_ms", "must be > 0")
    cfg.workload = wl

    m = raw.get("metrics", {})
    cfg.metrics = MetricsSpec(
        warmup_ms=_take(m, "warmup_ms", "metrics", int, 10_000),
        window_ms=_take(m, "window_ms", "metrics", int, 60_000),
        run_until=_take(m, "run_until", "metrics", str, "quiescence"),
    )
    if cfg.metrics.window_ms <= 0:
        raise ConfigError("metrics.window_ms", "must be > 0")
    if cfg.metrics.run_until not in ("quiescence", "window"):
        raise ConfigError("metrics.run_until", "expected quiescence or window")

    for i, f in enumerate(raw.get("failures", [])):
        p = f"failures[{i}]"
        node = _take(f, "node", p, str, None)
        if node is None:
            raise ConfigError(f"{p}.node", "missing")
        cfg.failures.append(Crash(node, _take(f, "crash_at", p, int, 0), _take(f, "recover_at", p, int, None)))
    cfg.unregistered = [str(u) for u in raw.get("unregistered", [])]
    check_references(cfg)
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError("file", str(exc)) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("file", f"not valid TOML: {exc}") from None
    return config_from_dict(raw)


def check_references(cfg: ScenarioConfig) -> None:
    """Every id named in the config must exist in the generated deployment."""
    domains = build_domains(cfg.topology)
    es_ids = {d.es_id for d in domains}
    dom_ids = {d.domain_id for d in domains}
    uav_ids = {u for d in domains for u in d.uav_ids}
    known = es_ids | uav_ids | {TA_ID}
    for i, c in enumerate(cfg.failures):
        if c.node_id not in known:
            raise ConfigError(f"failures[{i}].node", f"unknown node {c.node_id}")
    for d in cfg.workload.exclude_domains:
        if d not in dom_ids:
            raise ConfigError("workload.exclude_domains", f"unknown domain {d}")
    if set(cfg.workload.exclude_domains) >= dom_ids:
        raise ConfigError("workload.exclude_domains", "every domain excluded")
    for u in cfg.unregistered:
        if u not in uav_ids:
            raise ConfigError("unregistered", f"unknown UAV {u}")
    fixed = cfg.world.fixed_orchestrator
    if fixed is not None and fixed not in es_ids:
        raise ConfigError("protocol.fixed_orchestrator", f"unknown ES {fixed}")
    if cfg.topology.shape == "explicit":
        for a, b, lat in cfg.topology.links:
            if a not in es_ids or b not in es_ids:
                raise ConfigError("topology.links", f"link {a}-{b} names an unknown ES")
            if lat <= 0:
                raise ConfigError("topology.links", "latencies must be positive")


# deployment ------------------------------------------------------------------

def domain_id(i: int) -> str:
    return f"D{i:02d}"


def build_domains(spec: TopologySpec) -> list[DomainDescriptor]:
    out = []
    for i in range(1, spec.domains + 1):
        d = domain_id(i)
        uavs = frozenset(f"uav-{d}-{j:02d}" for j in range(1, spec.uavs_per_domain + 1))
        out.append(DomainDescriptor(d, f"es-{d}", uavs))
    return out


def build_topology(spec: TopologySpec, domains: Sequence[DomainDescriptor], es_link_ms: int) -> EsTopology:
    es = [d.es_id for d in domains]
    n = len(es)
    if spec.shape == "explicit":
        edges = spec.links
    elif spec.shape == "line":
        edges = [(es[i], es[i + 1], es_link_ms) for i in range(n - 1)]
    elif spec.shape == "ring":
        edges = [(es[i], es[(i + 1) % n], es_link_ms) for i in range(n)] if n > 2 else \
            [(es[i], es[i + 1], es_link_ms) for i in range(n - 1)]
    elif spec.shape == "star":
        edges = [(es[0], es[i], es_link_ms) for i in range(1, n)]
    else:
        edges = [(es[i], es[j], es_link_ms) for i in range(n) for j in range(i + 1, n)]
    topo = EsTopology.from_edges(es, edges)
    if not topo.is_connected():
        raise ConfigError("topology.links", "ES backbone is not connected")
    return topo


def offered_rate(cfg: ScenarioConfig) -> float:
    wl = cfg.workload
    if wl.rate_per_uav_per_s is not None:
        return wl.rate_per_uav_per_s * cfg.topology.domains * cfg.topology.uavs_per_domain
    return wl.rate_per_s


def _sfc_length(wl: WorkloadSpec, rng: random.Random) -> int:
    if isinstance(wl.sfc_length, tuple):
        return rng.randint(*wl.sfc_length)
    return wl.sfc_length


def make_request(task_id: str, length: int, domains: Sequence[DomainDescriptor], topo: EsTopology,
                 wl: WorkloadSpec, rng: random.Random, issued_at: int = 0) -> SfcRequest:
    """Draw hop placements: uniform over eligible UAVs, or a walk over neighbouring domains."""
    eligible = [d for d in domains if d.domain_id not in wl.exclude_domains]
    by_es = {d.es_id: d for d in eligible}
    hops = []
    dom = rng.choice(eligible)
    for k in range(length):
        if wl.placement == "uniform":
            dom = rng.choice(eligible)
        elif k > 0 and rng.random() >= 0.5:
            options = sorted(n for n in topo.neighbours(dom.es_id) if n in by_es)
            if options:
                dom = by_es[rng.choice(options)]
        uav = rng.choice(sorted(dom.uav_ids))
        hops.append(Hop(uav, dom.domain_id, f"f{k}"))
    return SfcRequest(task_id, tuple(hops), "gcs", issued_at)


def generate_workload(cfg: ScenarioConfig, domains: Sequence[DomainDescriptor], topo: EsTopology,
                      rng: random.Random) -> list[SfcRequest]:
    """Open-loop arrivals; draws interarrival then length then hops, per task."""
    wl = cfg.workload
    rate = offered_rate(cfg)
    if wl.arrival == "closed" or rate <= 0:
        return []
    out: list[SfcRequest] = []
    t = 0.0
    while True:
        gap = rng.expovariate(rate / 1000.0) if wl.arrival == "poisson" else 1000.0 / rate
        t += gap
        at = int(t)
        if wl.tasks is not None and len(out) >= wl.tasks:
            break
        if wl.duration_ms is not None and at >= wl.duration_ms:
            break
        length = _sfc_length(wl, rng)
        out.append(make_request(f"T{len(out) + 1:06d}", length, domains, topo, wl, rng, at))
    return out


# running ---------------------------------------------------------------------

@dataclass
class RunOutput:
    config: ScenarioConfig
    scheme: SchemeId
    seed: int
    world: World
    results: list[TaskResult]

    @property
    def trace(self) -> str:
        return self.world.kernel.trace_text()

    def completed(self) -> list[TaskResult]:
        return [r for r in self.results if r.status == "completed"]

    def latencies(self) -> list[int]:
        return [r.latency_ms for r in self.completed()]

    def throughput(self) -> float:
        m = self.config.metrics
        lo, hi = m.warmup_ms, m.warmup_ms + m.window_ms
        done = sum(1 for r in self.completed() if lo <= r.completed_at < hi)
        return done / (m.window_ms / 1000.0)

    def ledger_dump(self) -> str:
        for es in self.world.ledger.es_ids:
            if self.world.kernel.is_live(es):
                return self.world.ledger.dump(es)
        return self.world.ledger.dump(self.world.ledger.es_ids[0])


def build_world(cfg: ScenarioConfig, scheme: SchemeId, seed: int) -> World:
    domains = build_domains(cfg.topology)
    topo = build_topology(cfg.topology, domains, cfg.world.latency.es_link_ms)
    world = World(domains, topo, scheme, cfg.world, seed=seed, unregistered=cfg.unregistered, trace=cfg.trace)
    world.kernel.apply_failures(FailureScript(list(cfg.failures)))
    return world


def run_scenario(cfg: ScenarioConfig, scheme: SchemeId | str | None = None, seed: int | None = None) -> RunOutput:
    scheme = SchemeId.parse(scheme) if isinstance(scheme, str) else (scheme or cfg.schemes[0])
    seed = cfg.seed if seed is None else seed
    world = build_world(cfg, scheme, seed)
    rng = world.kernel.rng
    wl = cfg.workload
    if wl.arrival == "closed":
        _closed_loop(cfg, world, rng)
    else:
        for req in generate_workload(cfg, world.domains, world.topology, rng):
            world.submit(req, req.issued_at)
    if cfg.metrics.run_until == "window":
        world.kernel.run(cfg.metrics.warmup_ms + cfg.metrics.window_ms)
    else:
        world.kernel.run()
    return RunOutput(cfg, scheme, seed, world, world.tracker.results())


def _closed_loop(cfg: ScenarioConfig, world: World, rng: random.Random) -> None:
    wl = cfg.workload
    limit_n = wl.tasks
    limit_t = wl.duration_ms
    counter = [0]

    def launch(at: int) -> None:
        if limit_n is not None and counter[0] >= limit_n:
            return
        if limit_t is not None and at >= limit_t:
            return
        counter[0] += 1
        req = make_request(f"T{counter[0]:06d}", _sfc_length(wl, rng), world.domains, world.topology, wl, rng, at)
        world.submit(req, at)

    def on_done(res: TaskResult) -> None:
        launch(world.kernel.now + wl.think_ms)

    world.tracker.listeners.append(on_done)
    for _ in range(wl.concurrency):
        launch(0)


# sweeps and files ------------------------------------------------------------

def fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def _stats(values: Sequence[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    mean = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, sd


@dataclass
class SweepResult:
    sweep: str
    rows: list[dict] = field(default_factory=list)
    task_rows: list[dict] = field(default_factory=list)
    outputs: list[RunOutput] = field(default_factory=list)

    def aggregate(self, scheme: SchemeId | str, value) -> dict:
        label = scheme.value if isinstance(scheme, SchemeId) else scheme
        for r in self.rows:
            if r["kind"] == "aggregate" and r["scheme"] == label and r["value"] == str(value):
                return r
        raise KeyError((label, value))

    def metrics_csv(self) -> str:
        return _csv(METRICS_HEADER, METRICS_COLUMNS, self.rows)

    def tasks_csv(self) -> str:
        return _csv(TASKS_HEADER, TASK_COLUMNS, self.task_rows)


def _csv(header: str, columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    buf.write(header + "\r\n")
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\r\n")
    writer.writeheader()
    for r in rows:
        writer.writerow(r)
    return buf.getvalue()


def _task_row(out: RunOutput, sweep: str, value, r: TaskResult) -> dict:
    return {
        "scheme": out.scheme.value, "sweep": sweep, "value": str(value), "seed": out.seed,
        "task_id": r.task_id, "hops": r.hops, "status": r.status, "reason": r.reason,
        "initiated_at": "" if r.initiated_at is None else r.initiated_at,
        "completed_at": "" if r.completed_at is None else r.completed_at,
        "latency_ms": "" if r.latency_ms is None else r.latency_ms,
        "orchestrator": r.orchestrator or "", "elections": r.elections,
    }


def _replica_row(out: RunOutput, sweep: str, value) -> dict:
    lat = out.latencies()
    mean, sd = _stats(lat)
    return {
        "kind": "replica", "scheme": out.scheme.value, "sweep": sweep, "value": str(value), "seed": out.seed,
        "tasks": len(out.results), "completed": len(lat),
        "aborted": sum(1 for r in out.results if r.status == "aborted"),
        "latency_mean_ms": fmt(mean), "latency_stddev_ms": fmt(sd), "throughput_tps": fmt(out.throughput()),
    }


def aggregate_row(scheme: str, sweep: str, value: str, replica_rows: Sequence[dict],
                  task_rows: Sequence[dict]) -> dict:
    """Pooled task latencies; throughput averaged over replicas."""
    lat = [int(t["latency_ms"]) for t in task_rows if t["latency_ms"] != ""]
    mean, sd = _stats(lat)
    tps = [float(r["throughput_tps"]) for r in replica_rows]
    return {
        "kind": "aggregate", "scheme": scheme, "sweep": sweep, "value": value, "seed": "*",
        "tasks": sum(int(r["tasks"]) for r in replica_rows),
        "completed": sum(int(r["completed"]) for r in replica_rows),
        "aborted": sum(int(r["aborted"]) for r in replica_rows),
        "latency_mean_ms": fmt(mean), "latency_stddev_ms": fmt(sd),
        "throughput_tps": fmt(statistics.fmean(tps)) if tps else "",
    }


def run_sweep(cfg: ScenarioConfig, sweep: str, values: Sequence, apply, keep_outputs: bool = False) -> SweepResult:
    values = list(values)
    if not values:
        raise ConfigError(sweep, "sweep list is empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(sweep, "sweep values must be strictly ascending")
    res = SweepResult(sweep)
    for scheme in cfg.schemes:
        for value in values:
            vcfg = apply(cfg, value)
            reps, tasks = [], []
            for seed in cfg.replica_seeds():
                out = run_scenario(vcfg, scheme, seed)
                reps.append(_replica_row(out, sweep, value))
                tasks.extend(_task_row(out, sweep, value, r) for r in out.results)
                if keep_outputs:
                    res.outputs.append(out)
            res.rows.extend(reps)
            res.rows.append(aggregate_row(scheme.value, sweep, str(value), reps, tasks))
            res.task_rows.extend(tasks)
    return res


def with_length(cfg: ScenarioConfig, length: int) -> ScenarioConfig:
    return replace(cfg, workload=replace(cfg.workload, sfc_length=int(length)))


def with_uavs(cfg: ScenarioConfig, uavs: int) -> ScenarioConfig:
    per = cfg.topology.uavs_per_domain
    if uavs % per:
        raise ConfigError("sweep_throughput", f"UAV count {uavs} is not a multiple of {per} UAVs per domain")
    return replace(cfg, topology=replace(cfg.topology, domains=uavs // per))


def sweep_latency(cfg: ScenarioConfig, sfc_lengths: Sequence[int], keep_outputs: bool = False) -> SweepResult:
    return run_sweep(cfg, "sfc_length", sfc_lengths, with_length, keep_outputs)


def sweep_throughput(cfg: ScenarioConfig, uav_counts: Sequence[int], keep_outputs: bool = False) -> SweepResult:
    return run_sweep(cfg, "uavs", uav_counts, with_uavs, keep_outputs)


def write_run(out: RunOutput, directory: str | Path) -> dict[str, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rep = _replica_row(out, "run", "-")
    tasks = [_task_row(out, "run", "-", r) for r in out.results]
    rows = [rep, aggregate_row(out.scheme.value, "run", "-", [rep], tasks)]
    paths = {
        "metrics": d / "metrics.csv",
        "tasks": d / "tasks.csv",
        "trace": d / "trace.tsv",
        "ledger": d / "ledger.txt",
    }
    paths["metrics"].write_text(_csv(METRICS_HEADER, METRICS_COLUMNS, rows), newline="")
    paths["tasks"].write_text(_csv(TASKS_HEADER, TASK_COLUMNS, tasks), newline="")
    paths["trace"].write_text(out.trace)
    paths["ledger"].write_text(out.ledger_dump())
    return paths


def write_sweep(res: SweepResult, directory: str | Path, stem: str) -> dict[str, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": d / f"{stem}.csv", "tasks": d / f"{stem}_tasks.csv"}
    paths["metrics"].write_text(res.metrics_csv(), newline="")
    paths["tasks"].write_text(res.tasks_csv(), newline="")
    return paths


def read_csv(text: str) -> list[dict]:
    lines = text.split("\r\n", 1)
    if not lines[0].startswith("#format="):
        raise ValueError("missing format header")
    return list(csv.DictReader(io.StringIO(lines[1], newline="")))


# audit -----------------------------------------------------------------------

class BrokenChain(LedgerError):
    def __init__(self, height: int):
        super().__init__(f"ledger chain broken at height {height}")
        self.height = height


def audit_dump(text: str | bytes) -> str:
    """Per-task ordered timelines replayed from a ledger dump."""
    loaded = load_dump(text)
    if loaded.broken is not None:
        raise BrokenChain(loaded.broken.height)
    timelines = reconstruct_timelines(loaded.blocks)
    if not timelines:
        return "no tasks\n"
    lines = []
    for task_id, tl in timelines.items():
        lines.append(f"task {task_id}")
        for e in tl.events:
            detail = f" {e['detail']}" if e["detail"] else ""
            lines.append(f"  {e['seq']:>3} {e['op']:<9} hop={e['hop_index']} at={e['at']} "
                         f"nodes={','.join(e['nodes'])}{detail}")
    return "\n".join(lines) + "\n"


def parse_range(text: str) -> list[int]:
    """``2,4,6`` or ``10:100:10`` (inclusive stop)."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) == 3 else 1
            if step <= 0:
                raise ValueError
            return list(range(start, stop + 1, step))
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ConfigError("sweep", f"cannot parse range {text!r}") from None


def mean_or_nan(values: Sequence[float]) -> float:
    return statistics.fmean(values) if values else math.nan
