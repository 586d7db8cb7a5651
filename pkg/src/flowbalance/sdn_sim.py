"""OpenFlow-style switches, a reactive routing controller and the event loop.

The model keeps only what the monitoring pipeline observes: prefix-masked
src/dst IPv4 match keys, priorities, counters, hard/idle timeouts, the
flow-removed flag, and bounded table capacity. Control-plane latency is
zero: a packet-in is answered within the same simulated instant and the
buffered packet is re-matched at the switch that raised it.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, NamedTuple, Optional, Protocol

from .topology import SwitchId, Topology, ip_str

ROUTING_PRIO = 40
DISCOVERY_PRIO = 49
ACTIVE_PRIO = 50

FULL_MASK = 0xFFFFFFFF


def prefix_mask(length: int) -> int:
    return (FULL_MASK << (32 - length)) & FULL_MASK


MASKS = tuple(prefix_mask(i) for i in range(33))


class Origin(enum.IntEnum):
    ROUTING = 0
    DISCOVERY = 1
    ACTIVE = 2


class Action(enum.IntEnum):
    FORWARD = 0
    CONTROLLER = 1
    DROP = 2


class RemovedReason(enum.IntEnum):
    IDLE_TIMEOUT = 0
    HARD_TIMEOUT = 1


class Packet(NamedTuple):
    src: int
    dst: int
    size: int
    at: float


@dataclass(frozen=True, order=True)
class FlowKey:
    src: int
    src_len: int
    dst: int
    dst_len: int

    def __post_init__(self):
        for length in (self.src_len, self.dst_len):
            if not 0 <= length <= 32:
                raise ValueError(f"mask length {length} out of range")
        if self.src & ~prefix_mask(self.src_len) & FULL_MASK or self.dst & ~prefix_mask(self.dst_len) & FULL_MASK:
            raise ValueError(f"{self} has bits set beyond its mask")

    @classmethod
    def exact(cls, src: int, dst: int) -> "FlowKey":
        return _fast_key(src, 32, dst, 32)

    @classmethod
    def to_host(cls, dst: int) -> "FlowKey":
        """Wildcard source, exact destination."""
        return _fast_key(0, 0, dst, 32)

    @property
    def masks(self) -> tuple[int, int]:
        return MASKS[self.src_len], MASKS[self.dst_len]

    @property
    def specificity(self) -> int:
        return self.src_len + self.dst_len

    def matches(self, src: int, dst: int) -> bool:
        return src & prefix_mask(self.src_len) == self.src and dst & prefix_mask(self.dst_len) == self.dst

    def __str__(self):
        return f"{ip_str(self.src)}/{self.src_len}->{ip_str(self.dst)}/{self.dst_len}"


def _fast_key(src: int, src_len: int, dst: int, dst_len: int) -> FlowKey:
    # skips validation; callers pass well-formed host keys
    k = object.__new__(FlowKey)
    object.__setattr__(k, "src", src)
    object.__setattr__(k, "src_len", src_len)
    object.__setattr__(k, "dst", dst)
    object.__setattr__(k, "dst_len", dst_len)
    return k


_entry_seq = itertools.count()


@dataclass(eq=False, slots=True)
class FlowEntry:
    key: FlowKey
    priority: int
    action: Action = Action.FORWARD
    next_hop: Optional[SwitchId] = None
    packets: int = 0
    bytes: int = 0
    installed_at: float = 0.0
    last_matched_at: float = 0.0
    hard_timeout: float = 0.0
    idle_timeout: float = 0.0
    notify_on_remove: bool = False
    origin: Origin = Origin.ROUTING
    first_matched_at: Optional[float] = None
    seq: int = field(default_factory=lambda: next(_entry_seq))
    live: bool = False
    sort_key: tuple = ()

    @property
    def rank(self) -> tuple:
        """Match preference: priority, then specificity, then age (oldest first)."""
        return (self.priority, self.key.specificity, -self.installed_at, -self.seq)

    def deadline(self) -> float:
        """Earliest time this entry may expire, ``inf`` for static entries."""
        t = float("inf")
        if self.hard_timeout > 0:
            t = self.installed_at + self.hard_timeout
        if self.idle_timeout > 0:
            t = min(t, self.last_matched_at + self.idle_timeout)
        return t

    def snapshot(self) -> "FlowEntry":
        copy = FlowEntry(
            self.key, self.priority, self.action, self.next_hop, self.packets, self.bytes,
            self.installed_at, self.last_matched_at, self.hard_timeout, self.idle_timeout,
            self.notify_on_remove, self.origin, self.first_matched_at, self.seq,
        )
        return copy


class FullTableError(Exception):
    """Raised by :meth:`FlowTable.install` when no slot is free."""

    def __init__(self, switch: SwitchId | None, entry: FlowEntry):
        super().__init__(switch, entry)
        self.switch = switch
        self.entry = entry

    def __str__(self) -> str:
        # formatted lazily: saturated runs raise this tens of thousands of times
        return f"flow table full on switch {self.switch}: rejected {self.entry.key}"


class FlowTable:
    """Capacity-bounded flow table with tuple-space indexed lookup.

    Entries are bucketed by their (src mask, dst mask) pair so a lookup
    costs one dict probe per distinct mask pair in the table. Groups are
    probed best-first (highest priority, then most specific), which lets a
    lookup stop as soon as no remaining group can beat the current hit.
    """

    def __init__(self, capacity: int, switch: SwitchId | None = None):
        if capacity < 1:
            raise ValueError("table capacity must be >= 1")
        self.capacity = capacity
        self.switch = switch
        self._groups: dict[tuple[int, int], dict[tuple[int, int], list[FlowEntry]]] = {}
        # upper bound on (priority, specificity) per group; never lowered while the group lives
        self._bounds: dict[tuple[int, int], tuple] = {}
        self._order: list[tuple] = []
        # (src, dst) -> best entry or None; exact-key changes drop one pair,
        # any other change clears it (cleared in place, see Simulation.inject)
        self._cache: dict[tuple[int, int], Optional[FlowEntry]] = {}
        self._count = 0

    def _invalidate(self, key: FlowKey) -> None:
        if key.src_len == 32 and key.dst_len == 32:
            self._cache.pop((key.src, key.dst), None)
        else:
            self._cache.clear()

    def _reorder(self) -> None:
        # updated in place: the simulation keeps references to this list
        self._order[:] = sorted(
            ((self._bounds[m], m[0], m[1], g) for m, g in self._groups.items()),
            key=lambda o: o[0], reverse=True,
        )

    def _raise_bound(self, masks: tuple[int, int], priority: int) -> None:
        b = self._bounds.get(masks)
        if b is None or priority > b[0]:
            spec = bin(masks[0]).count("1") + bin(masks[1]).count("1")
            self._bounds[masks] = (priority, spec, math.inf)
            self._reorder()

    def __len__(self):
        return self._count

    @property
    def free(self) -> int:
        return self.capacity - self._count

    def entries(self) -> list[FlowEntry]:
        return [e for g in self._groups.values() for lst in g.values() for e in lst]

    def find(self, key: FlowKey, priority: int) -> Optional[FlowEntry]:
        g = self._groups.get((key.masks))
        if g:
            for e in g.get((key.src, key.dst), ()):
                if e.priority == priority:
                    return e
        return None

    def install(self, entry: FlowEntry, now: float = 0.0) -> Optional[FlowEntry]:
        """Add ``entry``; returns the entry it replaced, if any.

        An entry with identical key and priority is replaced in place
        without consuming a slot.
        """
        key = entry.key
        g = self._groups.setdefault((key.masks), {})
        bucket = g.get((key.src, key.dst))
        replaced = None
        if bucket:
            for i, e in enumerate(bucket):
                if e.priority == entry.priority:
                    replaced = e
                    bucket[i] = entry
                    break
        if replaced is None:
            if self._count >= self.capacity:
                if not g:
                    del self._groups[(key.masks)]
                raise FullTableError(self.switch, entry)
            if bucket is None:
                g[(key.src, key.dst)] = [entry]
            else:
                bucket.append(entry)
            self._count += 1
        else:
            replaced.live = False
        self._raise_bound(key.masks, entry.priority)
        entry.installed_at = now
        entry.last_matched_at = now
        entry.packets = 0
        entry.bytes = 0
        entry.first_matched_at = None
        entry.live = True
        entry.sort_key = entry.rank
        self._invalidate(key)
        assert self._count <= self.capacity
        return replaced

    def remove(self, entry: FlowEntry) -> bool:
        key = entry.key
        gk = (key.masks)
        g = self._groups.get(gk)
        if not g:
            return False
        bucket = g.get((key.src, key.dst))
        if not bucket or not any(e is entry for e in bucket):
            return False
        bucket[:] = [e for e in bucket if e is not entry]
        if not bucket:
            del g[(key.src, key.dst)]
            if not g:
                del self._groups[gk]
                del self._bounds[gk]
                self._reorder()
        self._count -= 1
        entry.live = False
        self._invalidate(key)
        return True

    def lookup(self, src: int, dst: int) -> Optional[FlowEntry]:
        """Best matching entry without touching counters."""
        k = (src, dst)
        cache = self._cache
        if k in cache:
            return cache[k]
        best = self._scan(src, dst)
        cache[k] = best
        return best

    def _scan(self, src: int, dst: int) -> Optional[FlowEntry]:
        best = None
        for bound, smask, dmask, g in self._order:
            if best is not None and bound < best.sort_key:
                break
            bucket = g.get((src & smask, dst & dmask))
            if bucket:
                for e in bucket:
                    if best is None or e.sort_key > best.sort_key:
                        best = e
        return best

    def hit(self, src: int, dst: int, size: int, now: float) -> Optional[FlowEntry]:
        """Like ``lookup`` but counts the packet against the winning entry."""
        best = self.lookup(src, dst)
        if best is not None:
            best.packets += 1
            best.bytes += size
            best.last_matched_at = now
            if best.first_matched_at is None:
                best.first_matched_at = now
        return best

    def match(self, pkt: Packet, now: float | None = None) -> Optional[FlowEntry]:
        """Best matching entry for ``pkt``; counters and last-match time update on a hit."""
        return self.hit(pkt.src, pkt.dst, pkt.size, pkt.at if now is None else now)


# --- control messages -------------------------------------------------------

@dataclass
class PacketIn:
    switch: SwitchId
    packet: Packet
    origin: Optional[Origin]  # None marks a table miss
    timestamp: float

    @property
    def table_miss(self) -> bool:
        return self.origin is None


@dataclass
class FlowMod:
    switch: SwitchId
    entry: FlowEntry
    timestamp: float = 0.0


@dataclass
class FlowRemoved:
    switch: SwitchId
    entry: FlowEntry
    reason: RemovedReason
    timestamp: float


@dataclass
class FullTableErrorMsg:
    switch: SwitchId
    entry: FlowEntry
    timestamp: float


def expire(table: FlowTable, now: float) -> list[FlowRemoved]:
    """Remove every timed-out entry; report those carrying the flow-removed flag."""
    removed = []
    for e in sorted(table.entries(), key=lambda e: e.seq):
        hard = e.hard_timeout > 0 and now >= e.installed_at + e.hard_timeout
        idle = e.idle_timeout > 0 and now >= e.last_matched_at + e.idle_timeout
        if hard or idle:
            table.remove(e)
            if e.notify_on_remove:
                reason = RemovedReason.HARD_TIMEOUT if hard else RemovedReason.IDLE_TIMEOUT
                removed.append(FlowRemoved(table.switch, e.snapshot(), reason, now))
    return removed


# outcome kinds returned by Switch.handle_packet
FORWARD = "forward"
PACKET_IN = "packet_in"
DROP = "drop"


class Switch:
    def __init__(self, switch_id: SwitchId, capacity: int):
        self.id = switch_id
        self.table = FlowTable(capacity, switch_id)

    def handle_packet(self, pkt: Packet, now: float) -> tuple[str, Optional[FlowEntry]]:
        """Match ``pkt`` and report what the switch does with it."""
        e = self.table.match(pkt, now)
        if e is None:
            return PACKET_IN, None
        if e.action is Action.FORWARD:
            return FORWARD, e
        if e.action is Action.CONTROLLER:
            return PACKET_IN, e
        return DROP, e


class ControllerAPI(Protocol):
    topology: Topology
    now: float

    def send_flow_mod(self, fm: FlowMod) -> bool: ...

    def path(self, src: int, dst: int) -> tuple[SwitchId, ...]: ...

    def ports(self, switch: SwitchId, src: int, dst: int) -> tuple[int, int]: ...


class MonitorApp(Protocol):
    """Hooks the simulation calls for monitoring-related control messages."""

    def on_packet_in(self, msg: PacketIn) -> Optional[FlowMod]: ...

    def on_flow_removed(self, msg: FlowRemoved) -> None: ...


ROUTING_MATCHES = ("exact", "destination")


def routing_key(src: int, dst: int, match: str = "exact") -> FlowKey:
    return FlowKey.exact(src, dst) if match == "exact" else FlowKey.to_host(dst)


def routing_entry(key: FlowKey, next_hop: Optional[SwitchId], idle: float) -> FlowEntry:
    return FlowEntry(key, ROUTING_PRIO, Action.FORWARD, next_hop, idle_timeout=idle, origin=Origin.ROUTING)


def controller_reactive_route(
    topology: Topology,
    tables: dict[SwitchId, FlowTable],
    msg: PacketIn,
    routing_idle: float = 5.0,
    match: str = "exact",
    path: Optional[tuple[SwitchId, ...]] = None,
) -> list[FlowMod]:
    """Flow-mods installing the route for a table-miss packet.

    ``match="exact"`` keys entries on (src/32, dst/32); ``"destination"``
    wildcards the source so one entry serves every flow to a host. Only
    switches lacking the routing entry receive one, so a second packet of
    an already routed flow produces nothing.
    """
    pkt = msg.packet
    if path is None:
        path = topology.route(topology.host_switch(pkt.src), topology.host_switch(pkt.dst))
    key = routing_key(pkt.src, pkt.dst, match)
    mods = []
    last = len(path) - 1
    for i, sw in enumerate(path):
        if tables[sw].find(key, ROUTING_PRIO) is None:
            nxt = path[i + 1] if i < last else None
            mods.append(FlowMod(sw, routing_entry(key, nxt, routing_idle), msg.timestamp))
    return mods


@dataclass
class SimCounters:
    packets: int = 0
    delivered: int = 0
    packet_in_routing: int = 0
    packet_in_monitoring: int = 0
    flow_removed: int = 0
    full_table_errors: int = 0
    flow_mods: int = 0


_MISS = object()

# event classes at equal timestamps
_EXPIRE, _ACTION, _ARRIVAL, _TICK = 0, 1, 2, 3


class Simulation:
    """Deterministic discrete-event loop over switches and the controller.

    At equal timestamps the order is: expirations (by switch id, then
    entry insertion order), scheduled control actions, packet arrivals (in
    schedule order), then end-of-instant ticks such as export flushes and
    metric samples.
    """

    def __init__(
        self,
        topology: Topology,
        capacity: int | dict[SwitchId, int],
        packets: Iterable[Packet] = (),
        routing_idle: float = 5.0,
        app: Optional[MonitorApp] = None,
        record_events: bool = False,
        routing_match: str = "exact",
    ):
        if routing_match not in ROUTING_MATCHES:
            raise ValueError(f"routing_match must be one of {ROUTING_MATCHES}")
        self.routing_match = routing_match
        self.topology = topology
        caps = capacity if isinstance(capacity, dict) else {s: capacity for s in topology.switches}
        self.switches = {s: Switch(s, caps[s]) for s in sorted(topology.switches)}
        self.tables = {s: sw.table for s, sw in self.switches.items()}
        self.routing_idle = routing_idle
        self.app = app
        self.counters = SimCounters()
        self.now = 0.0
        self.events: Optional[list[dict]] = [] if record_events else None
        self._packets: Iterator[Packet] = iter(packets)
        self._next_packet: Optional[Packet] = next(self._packets, None)
        self._timers: list = []
        self._tseq = itertools.count()
        self._route_cache: dict[tuple[int, int], tuple[SwitchId, ...]] = {}
        # per flow: [switch/table pairs along the path, packets generated]
        self._hop_cache: dict[tuple[int, int], list] = {}

    # -- scheduling -------------------------------------------------------
    def at(self, time: float, fn: Callable[[float], None], tick: bool = False) -> None:
        """Run ``fn(time)`` at ``time``; ``tick`` callbacks run after arrivals."""
        heapq.heappush(self._timers, (time, _TICK if tick else _ACTION, 0, next(self._tseq), fn))

    def _arm_expiry(self, switch: SwitchId, entry: FlowEntry) -> None:
        d = entry.deadline()
        if d != float("inf"):
            heapq.heappush(self._timers, (d, _EXPIRE, switch, entry.seq, entry))

    def _log(self, kind: str, switch: SwitchId, entry_or_key, **extra) -> None:
        if self.events is None:
            return
        key = entry_or_key.key if isinstance(entry_or_key, FlowEntry) else entry_or_key
        rec = {"t": self.now, "kind": kind, "switch": switch, "key": str(key)}
        rec.update(extra)
        self.events.append(rec)

    def event_log_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events or ())

    # -- controller API -----------------------------------------------------
    def send_flow_mod(self, fm: FlowMod) -> bool:
        """Deliver a flow-mod; False (and an error counted) when the table is full."""
        self.counters.flow_mods += 1
        table = self.tables[fm.switch]
        try:
            table.install(fm.entry, self.now)
        except FullTableError:
            self.counters.full_table_errors += 1
            if self.events is not None:
                self._log("full_table_error", fm.switch, fm.entry, origin=fm.entry.origin.name)
            return False
        if self.events is not None:
            self._log("flow_mod", fm.switch, fm.entry, origin=fm.entry.origin.name, priority=fm.entry.priority)
        self._arm_expiry(fm.switch, fm.entry)
        return True

    # -- data plane ---------------------------------------------------------
    def path(self, src: int, dst: int) -> tuple[SwitchId, ...]:
        """Switch sequence a packet from ``src`` to ``dst`` traverses."""
        key = (src, dst)
        r = self._route_cache.get(key)
        if r is None:
            t = self.topology
            r = t.route(t.host_switch(src), t.host_switch(dst))
            self._route_cache[key] = r
        return r

    def inject(self, pkt: Packet) -> None:
        """Carry one packet from its ingress switch to its destination host."""
        c = self.counters
        c.packets += 1
        src, dst, size = pkt.src, pkt.dst, pkt.size
        fk = (src, dst)
        flow = self._hop_cache.get(fk)
        if flow is None:
            flow = [tuple((sw, self.tables[sw]) for sw in self.path(src, dst)), 0]
            self._hop_cache[fk] = flow
        flow[1] += 1
        hops = flow[0]
        now = self.now
        FORWARD = Action.FORWARD
        for sw, table in hops:
            # inlined FlowTable.hit: this loop dominates run time
            entry = table._cache.get(fk, _MISS)
            if entry is _MISS:
                entry = table.lookup(src, dst)
            if entry is not None:
                entry.packets += 1
                entry.bytes += size
                entry.last_matched_at = now
                if entry.first_matched_at is None:
                    entry.first_matched_at = now
                action = entry.action
                if action is FORWARD:
                    continue
                if action is Action.DROP:
                    return
            path = self.path(src, dst)
            origin = None if entry is None else entry.origin
            msg = PacketIn(sw, pkt, origin, now)
            if origin is None:
                c.packet_in_routing += 1
                if self.events is not None:
                    self._log("packet_in", sw, FlowKey.exact(src, dst), trigger="table_miss")
                for fm in controller_reactive_route(
                    self.topology, self.tables, msg, self.routing_idle, self.routing_match, path
                ):
                    self.send_flow_mod(fm)
            else:
                c.packet_in_monitoring += 1
                if self.events is not None:
                    self._log("packet_in", sw, FlowKey.exact(src, dst), trigger=origin.name)
                if self.app is not None:
                    self.app.on_packet_in(msg)
            # the buffered packet is re-matched once the flow-mods landed; if
            # nothing forwarding was installed it is packet-out'ed to the next hop
            best = table.lookup(src, dst)
            if best is not None and best.action is not Action.CONTROLLER:
                table.hit(src, dst, size, now)
                if best.action is Action.DROP:
                    return
        c.delivered += 1

    def _expire_entry(self, switch: SwitchId, entry: FlowEntry) -> None:
        if not entry.live:
            return
        d = entry.deadline()
        if d > self.now:
            heapq.heappush(self._timers, (d, _EXPIRE, switch, entry.seq, entry))
            return
        hard = entry.hard_timeout > 0 and self.now >= entry.installed_at + entry.hard_timeout
        self.tables[switch].remove(entry)
        self._log("expire", switch, entry, origin=entry.origin.name)
        if entry.notify_on_remove:
            self.counters.flow_removed += 1
            reason = RemovedReason.HARD_TIMEOUT if hard else RemovedReason.IDLE_TIMEOUT
            msg = FlowRemoved(switch, entry.snapshot(), reason, self.now)
            self._log("flow_removed", switch, entry, packets=entry.packets, bytes=entry.bytes)
            if self.app is not None:
                self.app.on_flow_removed(msg)

    def step(self, until: float) -> None:
        """Process every event with timestamp <= ``until``."""
        timers = self._timers
        while True:
            t_timer = timers[0][0] if timers else float("inf")
            pkt = self._next_packet
            t_pkt = pkt.at if pkt is not None else float("inf")
            t = min(t_timer, t_pkt)
            if t > until or t == float("inf"):
                break
            self.now = t
            while timers and timers[0][0] == t and timers[0][1] < _ARRIVAL:
                _, cls, sw, _, payload = heapq.heappop(timers)
                if cls == _EXPIRE:
                    self._expire_entry(sw, payload)
                else:
                    payload(t)
            while pkt is not None and pkt.at == t:
                self.inject(pkt)
                pkt = next(self._packets, None)
            self._next_packet = pkt
            # expirations armed during arrivals cannot land at t (timeouts > 0)
            while timers and timers[0][0] == t:
                _, cls, sw, _, payload = heapq.heappop(timers)
                if cls == _EXPIRE:
                    self._expire_entry(sw, payload)
                else:
                    payload(t)
        self.now = max(self.now, until)

    # -- observation -----------------------------------------------------------
    def ports(self, switch: SwitchId, src: int, dst: int) -> tuple[int, int]:
        """(input, output) port indices on ``switch`` for packets from ``src`` to ``dst``."""
        path = self.path(src, dst)
        i = path.index(switch)
        t = self.topology
        inp = t.port_of(switch, src, host=True) if i == 0 else t.port_of(switch, path[i - 1])
        out = t.port_of(switch, dst, host=True) if i == len(path) - 1 else t.port_of(switch, path[i + 1])
        return inp, out

    def free_entries(self) -> dict[SwitchId, int]:
        return {s: t.free for s, t in self.tables.items()}

    def total_entries(self) -> int:
        return sum(len(t) for t in self.tables.values())

    def packets_generated(self, src: int, dst: int) -> int:
        flow = self._hop_cache.get((src, dst))
        return flow[1] if flow else 0

    def check_capacity(self) -> None:
        for s, t in self.tables.items():
            if not 0 <= len(t) <= t.capacity:
                raise RuntimeError(f"switch {s} holds {len(t)} entries, capacity {t.capacity}")
