"""Active-flow installation and timeout scheduling.

A packet trapped by a discovery entry gets an exact-match entry with the
flow-removed flag on the same switch. When that entry expires its counters
become a stats record and the entry is reinstalled with the next timeout.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

from .sdn_sim import (
    ACTIVE_PRIO, Action, ControllerAPI, FlowEntry, FlowKey, FlowMod, FlowRemoved, Origin, PacketIn,
)
from .netflow import StatsRecord
from .topology import SwitchId


@dataclass(frozen=True)
class FixedTimeout:
    timeout: float = 60.0

    @property
    def initial(self) -> float:
        return self.timeout


@dataclass(frozen=True)
class AdaptiveTimeout:
    alpha: float = 2.0
    delta: float = 0.5
    min_t: float = 15.0
    max_t: float = 120.0
    start: float = 60.0

    def __post_init__(self):
        if self.alpha <= 1 or self.delta <= 0:
            raise ValueError("adaptive policy needs alpha > 1 and delta > 0")
        if not 0 < self.min_t <= self.start <= self.max_t:
            raise ValueError("adaptive policy needs 0 < min_t <= start <= max_t")

    @property
    def initial(self) -> float:
        return self.start


TimeoutPolicy = FixedTimeout | AdaptiveTimeout


@dataclass
class ActiveFlowState:
    key: FlowKey
    home_switch: SwitchId
    current_timeout: float
    last_packets: int = 0
    last_bytes: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=8))
    installed: bool = False
    entry: Optional[FlowEntry] = None


def next_timeout(p: TimeoutPolicy, state: ActiveFlowState) -> float:
    if isinstance(p, FixedTimeout):
        return p.timeout
    if len(state.history) < 2:
        return state.current_timeout
    prev = state.history[-2][1]
    cur = state.history[-1][1]
    variability = abs(cur - prev) / max(prev, 1)
    if variability > p.delta:
        return max(p.min_t, state.current_timeout / p.alpha)
    return min(p.max_t, state.current_timeout * p.alpha)


class Scheduler:
    """Monitoring app plugged into the simulation's controller."""

    def __init__(
        self,
        api: ControllerAPI,
        policy: TimeoutPolicy,
        export: Callable[[StatsRecord], None],
        flow_to_obs: Callable[[int, int], frozenset[SwitchId]] = lambda s, d: frozenset(),
    ):
        self.api = api
        self.policy = policy
        self.export = export
        self.flow_to_obs = flow_to_obs
        self.flows: dict[FlowKey, ActiveFlowState] = {}
        self.install_failures = 0
        self.stats_records = 0

    def _entry(self, state: ActiveFlowState, src: int, dst: int) -> FlowEntry:
        path = self.api.path(src, dst)
        i = path.index(state.home_switch)
        nxt = path[i + 1] if i + 1 < len(path) else None
        return FlowEntry(
            state.key, ACTIVE_PRIO, Action.FORWARD, nxt,
            hard_timeout=state.current_timeout, notify_on_remove=True, origin=Origin.ACTIVE,
        )

    def _install(self, state: ActiveFlowState) -> Optional[FlowMod]:
        entry = self._entry(state, state.key.src, state.key.dst)
        fm = FlowMod(state.home_switch, entry, self.api.now)
        if self.api.send_flow_mod(fm):
            state.installed = True
            state.entry = entry
            return fm
        state.installed = False
        self.install_failures += 1
        return None

    def on_packet_in(self, msg: PacketIn) -> Optional[FlowMod]:
        if msg.origin is not Origin.DISCOVERY:
            return None
        key = FlowKey.exact(msg.packet.src, msg.packet.dst)
        state = self.flows.get(key)
        if state is not None:
            if state.home_switch != msg.switch:
                raise AssertionError(f"{key} trapped on {msg.switch}, home is {state.home_switch}")
            if state.installed:
                return None
            return self._install(state)
        state = ActiveFlowState(key, msg.switch, self.policy.initial)
        fm = self._install(state)
        if fm is not None:
            self.flows[key] = state
        return fm

    def on_flow_removed(self, msg: FlowRemoved) -> Optional[FlowMod]:
        e = msg.entry
        if e.origin is not Origin.ACTIVE:
            return None
        state = self.flows.get(e.key)
        if state is None:
            return None
        first = e.first_matched_at if e.first_matched_at is not None else e.installed_at
        last = e.last_matched_at if e.packets else first
        src, dst = e.key.src, e.key.dst
        ports = self.api.ports(msg.switch, src, dst)
        record = StatsRecord(
            src, dst, e.packets, e.bytes, first, last, msg.switch,
            self.flow_to_obs(src, dst), ports[0], ports[1],
        )
        self.stats_records += 1
        self.export(record)
        state.installed = False
        state.entry = None
        if e.packets == 0:
            # idle for a whole period: wait for a new packet-in
            del self.flows[e.key]
            return None
        state.history.append((e.packets, e.bytes))
        state.last_packets, state.last_bytes = e.packets, e.bytes
        state.current_timeout = next_timeout(self.policy, state)
        return self._install(state)
