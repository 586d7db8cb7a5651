"""Aggregated flows, observed-switch selection and discovery-entry installation."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

from .sdn_sim import DISCOVERY_PRIO, Action, FlowEntry, FlowKey, FlowMod, Origin
from .topology import Subnet, SwitchId, Topology


@dataclass(frozen=True, order=True)
class AggregatedFlow:
    src_subnet: Subnet
    dst_subnet: Subnet
    src_switch: SwitchId
    dst_switch: SwitchId

    @property
    def key(self) -> FlowKey:
        return FlowKey(self.src_subnet.base, self.src_subnet.prefix_len,
                       self.dst_subnet.base, self.dst_subnet.prefix_len)

    def __str__(self):
        return f"{self.src_subnet}->{self.dst_subnet}"


RouteMap = Mapping[AggregatedFlow, tuple[SwitchId, ...]]


@dataclass
class DiscoveryPlan:
    monitored: list[AggregatedFlow]
    flow_to_obs: dict[AggregatedFlow, frozenset[SwitchId]]
    routes: dict[AggregatedFlow, tuple[SwitchId, ...]]
    assignment: dict[AggregatedFlow, SwitchId] = field(default_factory=dict)
    failed: list[AggregatedFlow] = field(default_factory=list)

    def check(self) -> None:
        for f in self.monitored:
            assert self.flow_to_obs[f], f"{f} has no OBS on its route"
            assert self.flow_to_obs[f] <= set(self.routes[f])
            if f in self.assignment:
                assert self.assignment[f] in self.routes[f], f"{f} assigned off-route"

    def flow_for(self, src: int, dst: int) -> Optional[AggregatedFlow]:
        for f in self.monitored:
            if f.src_subnet.contains(src) and f.dst_subnet.contains(dst):
                return f
        return None


def enumerate_flows(t: Topology) -> list[AggregatedFlow]:
    """Every directed subnet pair between a source and a destination switch.

    A subnet is never paired with itself; two subnets on the same switch
    do form a (locally routed) flow.
    """
    flows = []
    for s in sorted(t.sources):
        for d in sorted(t.destinations):
            for a in t.subnets.get(s, ()):
                for b in t.subnets.get(d, ()):
                    if a != b:
                        flows.append(AggregatedFlow(a, b, s, d))
    return sorted(flows)


def route_map(t: Topology, flows: Iterable[AggregatedFlow]) -> dict[AggregatedFlow, tuple[SwitchId, ...]]:
    return {f: t.route(f.src_switch, f.dst_switch) for f in flows}


def passes_obs(route: Iterable[SwitchId], obs: frozenset[SwitchId]) -> frozenset[SwitchId]:
    """Selection predicate: the OBSs a route crosses (empty means not monitored)."""
    return obs.intersection(route)


def select_monitored(
    flows: Iterable[AggregatedFlow],
    routes: RouteMap,
    obs: Iterable[SwitchId],
    predicate: Callable[[Iterable[SwitchId], frozenset[SwitchId]], frozenset[SwitchId]] = passes_obs,
) -> tuple[list[AggregatedFlow], dict[AggregatedFlow, frozenset[SwitchId]]]:
    obs = frozenset(obs)
    monitored = []
    flow_to_obs = {}
    for f in flows:
        hit = predicate(routes[f], obs)
        if hit:
            monitored.append(f)
            flow_to_obs[f] = hit
    return monitored, flow_to_obs


def build_plan(t: Topology, obs: Iterable[SwitchId]) -> DiscoveryPlan:
    flows = enumerate_flows(t)
    routes = route_map(t, flows)
    monitored, flow_to_obs = select_monitored(flows, routes, obs)
    return DiscoveryPlan(monitored, flow_to_obs, {f: routes[f] for f in monitored})


def discovery_entry(f: AggregatedFlow) -> FlowEntry:
    return FlowEntry(f.key, DISCOVERY_PRIO, Action.CONTROLLER, origin=Origin.DISCOVERY)


def install_discovery(plan: DiscoveryPlan, now: float = 0.0) -> list[FlowMod]:
    """One static send-to-controller flow-mod per monitored flow, at its assigned switch."""
    return [FlowMod(plan.assignment[f], discovery_entry(f), now) for f in plan.monitored]


def choose_obs(t: Topology, count: int, seed: int) -> list[SwitchId]:
    """``count`` distinct switches drawn uniformly with a seeded generator."""
    switches = sorted(t.switches)
    if not 0 <= count <= len(switches):
        raise ValueError(f"cannot choose {count} OBSs among {len(switches)} switches")
    return sorted(random.Random(seed).sample(switches, count))
