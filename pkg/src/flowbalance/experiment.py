"""End-to-end runs, measured parameters and parameter sweeps."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from .assignment import LoadModel, assign_balanced, assign_baseline
from .discovery import AggregatedFlow, DiscoveryPlan, build_plan, choose_obs, install_discovery
from .netflow import Exporter, NullSink, Sink, parse_sink
from .scheduler import AdaptiveTimeout, FixedTimeout, Scheduler, TimeoutPolicy
from .sdn_sim import Simulation
from .topology import SwitchId, Topology, attach_hosts, load_topology
from .workload import PingSchedule, WorkloadSpec, generate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "time_s", "total_flow_entries", "gini_free", "packet_in_routing",
    "packet_in_monitoring", "flow_removed", "full_table_errors", "flow_mods",
]
SWEEP_DIMENSIONS = {"table_capacity", "cycle_s", "obs_count"}


class ConfigError(ValueError):
    pass


def gini(values: Sequence[float]) -> float:
    """Gini coefficient: mean absolute pairwise difference over twice the mean.

    All-zero input yields 0.
    """
    xs = sorted(float(v) for v in values)
    n = len(xs)
    if n == 0:
        raise ValueError("gini of an empty sequence")
    if any(x < 0 for x in xs):
        raise ValueError("gini needs non-negative values")
    total = math.fsum(xs)
    if total == 0:
        return 0.0
    # sum_{i,j} |x_i - x_j| = 2 * sum_i (2i - n + 1) x_(i) for ascending x, i from 0
    weighted = math.fsum((2 * i - n + 1) * x for i, x in enumerate(xs))
    return weighted / (n * total)


@dataclass
class ExperimentConfig:
    topology: str = "tree11"
    hosts_per_switch: int = 10
    obs: Optional[list[int]] = None
    obs_count: int = 1
    table_capacity: int = 1000
    assignment: str = "balanced"
    mu: float = 0.05
    scheduler: str = "fixed"
    fixed_timeout_s: float = 60.0
    adaptive: dict = field(default_factory=lambda: {"alpha": 2.0, "delta": 0.5, "min_s": 15.0, "max_s": 120.0})
    cycle_s: float = 1.0
    duration_s: float = 300.0
    peers_per_host: int = 10
    pkt_interval_s: float = 1.0
    pkt_size: int = 98
    seed: int = 0
    routing_idle_s: float = 5.0
    routing_match: str = "destination"
    learn_cycles: int = 1
    sample_interval_s: float = 1.0
    export: str = "none"
    export_mode: str = "transparent"
    epoch_s: float = 1_400_000_000.0

    def validate(self) -> "ExperimentConfig":
        if self.table_capacity < 1:
            raise ConfigError("table_capacity must be >= 1")
        if self.assignment not in ("balanced", "baseline"):
            raise ConfigError(f"assignment must be balanced or baseline, not {self.assignment!r}")
        if self.scheduler not in ("fixed", "adaptive"):
            raise ConfigError(f"scheduler must be fixed or adaptive, not {self.scheduler!r}")
        if self.export_mode not in ("transparent", "actual"):
            raise ConfigError(f"export_mode must be transparent or actual, not {self.export_mode!r}")
        if not 0 <= self.mu <= 1:
            raise ConfigError("mu must lie in [0, 1]")
        if self.sample_interval_s <= 0:
            raise ConfigError("sample_interval_s must be positive")
        if self.routing_match not in ("exact", "destination"):
            raise ConfigError("routing_match must be exact or destination")
        if self.learn_cycles < 0:
            raise ConfigError("learn_cycles must be >= 0")
        try:
            self.workload()
            self.policy()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def workload(self) -> WorkloadSpec:
        return WorkloadSpec(self.cycle_s, self.duration_s, self.peers_per_host,
                            self.pkt_interval_s, self.pkt_size, self.seed)

    def policy(self) -> TimeoutPolicy:
        if self.scheduler == "fixed":
            return FixedTimeout(self.fixed_timeout_s)
        a = self.adaptive
        return AdaptiveTimeout(a.get("alpha", 2.0), a.get("delta", 0.5), a.get("min_s", 15.0),
                               a.get("max_s", 120.0), a.get("start_s", self.fixed_timeout_s))

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data).validate()

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_mapping(data)


@dataclass
class MetricsSample:
    time_s: float
    total_flow_entries: int
    free_entries: dict[SwitchId, int]
    gini_free: float
    packet_in_routing: int
    packet_in_monitoring: int
    flow_removed_count: int
    full_table_errors: int
    flow_mods_sent: int

    def row(self) -> list[str]:
        return [
            f"{self.time_s:g}", str(self.total_flow_entries), f"{self.gini_free:.6f}",
            str(self.packet_in_routing), str(self.packet_in_monitoring),
            str(self.flow_removed_count), str(self.full_table_errors), str(self.flow_mods_sent),
        ]


@dataclass
class RunResult:
    config: ExperimentConfig
    samples: list[MetricsSample]
    obs: list[SwitchId]
    plan: DiscoveryPlan
    packets: int
    delivered: int
    stats_records: int
    records_exported: int
    datagrams: int
    discovery_failures: int
    removed_packets: dict[tuple[int, int], int]
    exported_packets: dict[tuple[int, int], int]
    generated_packets: dict[tuple[int, int], int]
    datagram_log: Optional[list[tuple[int, bytes]]] = None
    event_log: Optional[list[dict]] = None

    @property
    def final(self) -> MetricsSample:
        return self.samples[-1]

    @property
    def total_packet_in(self) -> int:
        return self.final.packet_in_routing + self.final.packet_in_monitoring

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for s in self.samples:
            w.writerow(s.row())
        return buf.getvalue()

    def summary(self) -> dict[str, Any]:
        f = self.final
        return {
            "assignment": self.config.assignment,
            "seed": self.config.seed,
            "table_capacity": self.config.table_capacity,
            "cycle_s": self.config.cycle_s,
            "obs_count": len(self.obs),
            "obs": " ".join(map(str, self.obs)),
            "monitored_flows": len(self.plan.monitored),
            "total_flow_entries": f.total_flow_entries,
            "gini_free": round(f.gini_free, 6),
            "packet_in_routing": f.packet_in_routing,
            "packet_in_monitoring": f.packet_in_monitoring,
            "packet_in_total": self.total_packet_in,
            "flow_removed": f.flow_removed_count,
            "full_table_errors": f.full_table_errors,
            "flow_mods": f.flow_mods_sent,
            "records_exported": self.records_exported,
        }


class _Recorder:
    """Receives stats records; keeps per-flow packet sums for conservation checks."""

    def __init__(self, exporter: Exporter):
        self.exporter = exporter
        self.removed_packets: dict[tuple[int, int], int] = {}

    def __call__(self, record) -> None:
        k = (record.src_ip, record.dst_ip)
        self.removed_packets[k] = self.removed_packets.get(k, 0) + record.packets
        self.exporter.add(record)


def _obs_lookup(topo: Topology, plan: DiscoveryPlan):
    subnet_of = {}
    for s, nets in topo.subnets.items():
        for a in topo.hosts.get(s, ()):
            subnet_of[a] = next(n for n in nets if n.contains(a))
    by_pair = {(f.src_subnet, f.dst_subnet): plan.flow_to_obs[f] for f in plan.monitored}

    def lookup(src: int, dst: int) -> frozenset[SwitchId]:
        return by_pair.get((subnet_of.get(src), subnet_of.get(dst)), frozenset())

    return lookup


def prepare(cfg: ExperimentConfig) -> tuple[Topology, PingSchedule, list[SwitchId]]:
    topo = attach_hosts(load_topology(cfg.topology), cfg.hosts_per_switch)
    schedule = generate(topo, cfg.workload())
    obs = sorted(cfg.obs) if cfg.obs is not None else choose_obs(topo, cfg.obs_count, cfg.seed)
    unknown = set(obs) - set(topo.switches)
    if unknown:
        raise ConfigError(f"OBS {sorted(unknown)} not in topology")
    return topo, schedule, obs


def run(
    cfg: ExperimentConfig,
    sink: Optional[Sink] = None,
    keep_datagrams: bool = False,
    record_events: bool = False,
    check_capacity: bool = True,
) -> RunResult:
    """Learn phase, discovery + assignment, then the monitored run."""
    cfg.validate()
    topo, schedule, obs = prepare(cfg)
    plan = build_plan(topo, obs)
    sim = Simulation(topo, cfg.table_capacity, schedule, cfg.routing_idle_s,
                     record_events=record_events, routing_match=cfg.routing_match)
    if sink is None:
        sink = parse_sink(cfg.export)
    exporter = Exporter(sink, cfg.export_mode, 0.0, cfg.epoch_s, history=[] if keep_datagrams else None)
    exported: dict[tuple[int, int], int] = {}
    recorder = _Recorder(exporter)
    sched = Scheduler(sim, cfg.policy(), recorder, _obs_lookup(topo, plan))
    sim.app = sched
    model = LoadModel(cfg.mu)

    def install(now: float) -> None:
        if cfg.assignment == "balanced":
            free = sim.free_entries()
            plan.assignment = assign_balanced(plan.monitored, plan.routes, free, model)
        else:
            plan.assignment = assign_baseline(plan.monitored, plan.flow_to_obs, cfg.seed)
        plan.check()
        for f, fm in zip(plan.monitored, install_discovery(plan, now)):
            if not sim.send_flow_mod(fm):
                plan.failed.append(f)

    learn_end = min(cfg.learn_cycles * cfg.cycle_s, cfg.duration_s)
    sim.at(learn_end, install)

    samples: list[MetricsSample] = []

    def sample(now: float) -> None:
        exporter.flush(now)
        if check_capacity:
            sim.check_capacity()
        free = sim.free_entries()
        c = sim.counters
        samples.append(MetricsSample(
            now, sim.total_entries(), free, gini([free[s] for s in sorted(free)]),
            c.packet_in_routing, c.packet_in_monitoring, c.flow_removed,
            c.full_table_errors, c.flow_mods,
        ))

    n_samples = int(math.floor(cfg.duration_s / cfg.sample_interval_s + 1e-9))
    for k in range(1, n_samples + 1):
        sim.at(k * cfg.sample_interval_s, sample, tick=True)
    sim.step(cfg.duration_s)
    exporter.flush(sim.now)
    exporter.close()
    if not samples:
        sample(sim.now)

    for k, n in exporter.exported_packets.items():
        exported[k] = n
    return RunResult(
        config=cfg,
        samples=samples,
        obs=obs,
        plan=plan,
        packets=sim.counters.packets,
        delivered=sim.counters.delivered,
        stats_records=sched.stats_records,
        records_exported=exporter.records_exported,
        datagrams=exporter.datagrams,
        discovery_failures=len(plan.failed),
        removed_packets=recorder.removed_packets,
        exported_packets=exported,
        generated_packets=schedule.packets_per_flow(),
        datagram_log=exporter.history,
        event_log=sim.events,
    )


def sweep(
    template: ExperimentConfig,
    dimension: str,
    values: Iterable[Any],
    strategies: Sequence[str] = ("balanced", "baseline"),
) -> list[RunResult]:
    """One run per (value, strategy); seeds are shared across strategies."""
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    if dimension not in SWEEP_DIMENSIONS:
        raise ConfigError(f"cannot sweep {dimension!r}; choose from {sorted(SWEEP_DIMENSIONS)}")
    results = []
    for v in values:
        for strategy in strategies:
            cfg = template.replace(**{dimension: v, "assignment": strategy})
            if dimension == "obs_count":
                cfg = cfg.replace(obs=None)
            log.info("run %s=%s assignment=%s seed=%s", dimension, v, strategy, cfg.seed)
            results.append(run(cfg))
    return results


def summary_csv(results: Iterable[RunResult], dimension: Optional[str] = None) -> str:
    rows = [r.summary() for r in results]
    buf = io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0])
    if dimension and dimension not in cols:
        cols.insert(0, dimension)
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()
