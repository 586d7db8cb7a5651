"""Seeded ping-cycle traffic.

Each cycle every active host picks ``peers_per_host`` distinct random
peers. A chosen pair exchanges packets in both directions every
``pkt_interval_s`` until the cycle ends; the two directions are separate
flows and a pair picked from both ends is only counted once.
"""

from __future__ import annotations

import functools
import math
import random
from dataclasses import dataclass
from typing import Iterator

from .sdn_sim import Packet
from .topology import Topology


@dataclass(frozen=True)
class WorkloadSpec:
    cycle_s: float = 1.0
    duration_s: float = 300.0
    peers_per_host: int = 10
    pkt_interval_s: float = 1.0
    pkt_size: int = 98
    seed: int = 0

    def __post_init__(self):
        if self.cycle_s < 1:
            raise ValueError("cycle_s must be >= 1")
        if self.duration_s < 0 or self.pkt_interval_s <= 0 or self.pkt_size <= 0:
            raise ValueError("duration, packet interval and size must be positive")
        if self.peers_per_host < 0:
            raise ValueError("peers_per_host must be >= 0")

    @property
    def cycles(self) -> int:
        return math.ceil(self.duration_s / self.cycle_s - 1e-9)


class PingSchedule:
    """Deterministic, re-iterable packet arrival schedule.

    Peer choices are drawn eagerly (they are small); packets are expanded
    lazily, cycle by cycle, in (time, source, destination) order.
    """

    def __init__(self, hosts: list[int], spec: WorkloadSpec):
        self.spec = spec
        self.hosts = sorted(hosts)
        rng = random.Random(spec.seed)
        self.cycle_flows: list[list[tuple[int, int]]] = []
        others = {h: [p for p in self.hosts if p != h] for h in self.hosts}
        for _ in range(spec.cycles):
            directed = set()
            for h in self.hosts:
                for p in rng.sample(others[h], spec.peers_per_host):
                    directed.add((h, p))
                    directed.add((p, h))
            self.cycle_flows.append(sorted(directed))

    def flows(self) -> set[tuple[int, int]]:
        return {f for c in self.cycle_flows for f in c}

    def cycle_times(self, c: int) -> list[float]:
        s = self.spec
        start = c * s.cycle_s
        end = min(start + s.cycle_s, s.duration_s)
        n = max(0, math.ceil((end - start) / s.pkt_interval_s - 1e-9))
        return [start + k * s.pkt_interval_s for k in range(n)]

    def __iter__(self) -> Iterator[Packet]:
        size = self.spec.pkt_size
        for c, flows in enumerate(self.cycle_flows):
            for t in self.cycle_times(c):
                for src, dst in flows:
                    yield Packet(src, dst, size, t)

    def __len__(self) -> int:
        return sum(len(f) * len(self.cycle_times(c)) for c, f in enumerate(self.cycle_flows))

    @functools.cached_property
    def _per_flow(self) -> dict[tuple[int, int], int]:
        counts: dict[tuple[int, int], int] = {}
        for c, flows in enumerate(self.cycle_flows):
            n = len(self.cycle_times(c))
            for f in flows:
                counts[f] = counts.get(f, 0) + n
        return counts

    def packets_per_flow(self) -> dict[tuple[int, int], int]:
        return dict(self._per_flow)


def generate(t: Topology, w: WorkloadSpec) -> PingSchedule:
    hosts = t.all_hosts()
    if w.peers_per_host and len(hosts) < w.peers_per_host + 1:
        raise ValueError(f"{len(hosts)} hosts cannot each ping {w.peers_per_host} distinct peers")
    return _schedule(tuple(hosts), w)


@functools.lru_cache(maxsize=2)
def _schedule(hosts: tuple[int, ...], w: WorkloadSpec) -> PingSchedule:
    # schedules are immutable, so sweeps over table size or strategy share one
    return PingSchedule(list(hosts), w)
