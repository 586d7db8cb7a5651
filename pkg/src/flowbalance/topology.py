"""Network graphs, host subnets and deterministic shortest-path routes."""

from __future__ import annotations

import ipaddress
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

SwitchId = int

SUBNET_PREFIX = 28
DATA_DIR = Path(__file__).parent / "data"


class TopologyError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Subnet:
    base: int
    prefix_len: int

    def __post_init__(self):
        if not 0 <= self.prefix_len <= 32:
            raise TopologyError(f"bad prefix length {self.prefix_len}")
        if self.base & ~self.mask & 0xFFFFFFFF:
            raise TopologyError(f"{ipaddress.IPv4Address(self.base)}/{self.prefix_len} has host bits set")

    @classmethod
    def parse(cls, cidr: str) -> "Subnet":
        try:
            net = ipaddress.IPv4Network(cidr, strict=True)
        except ValueError as exc:
            raise TopologyError(str(exc)) from exc
        return cls(int(net.network_address), net.prefixlen)

    @property
    def mask(self) -> int:
        return (0xFFFFFFFF << (32 - self.prefix_len)) & 0xFFFFFFFF

    @property
    def size(self) -> int:
        return 1 << (32 - self.prefix_len)

    @property
    def last(self) -> int:
        return self.base + self.size - 1

    def contains(self, addr: int) -> bool:
        return addr & self.mask == self.base

    def overlaps(self, other: "Subnet") -> bool:
        return self.base <= other.last and other.base <= self.last

    def __str__(self):
        return f"{ipaddress.IPv4Address(self.base)}/{self.prefix_len}"


@dataclass
class Topology:
    switches: frozenset[SwitchId]
    links: frozenset[tuple[SwitchId, SwitchId]]
    subnets: dict[SwitchId, tuple[Subnet, ...]] = field(default_factory=dict)
    sources: frozenset[SwitchId] = frozenset()
    destinations: frozenset[SwitchId] = frozenset()
    hosts: dict[SwitchId, tuple[int, ...]] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        self.switches = frozenset(self.switches)
        self.links = frozenset(tuple(sorted(l)) for l in self.links)
        self.sources = frozenset(self.sources)
        self.destinations = frozenset(self.destinations)
        self._adj: dict[SwitchId, list[SwitchId]] = {s: [] for s in self.switches}
        for a, b in self.links:
            if a not in self._adj or b not in self._adj:
                raise TopologyError(f"link {a}-{b} references an unknown switch")
            self._adj[a].append(b)
            self._adj[b].append(a)
        for nbrs in self._adj.values():
            nbrs.sort()
        self._routes: dict[tuple[SwitchId, SwitchId], tuple[SwitchId, ...]] = {}
        self._host_index: dict[int, SwitchId] | None = None

    @property
    def endpoints(self) -> frozenset[SwitchId]:
        return self.sources | self.destinations

    def neighbors(self, s: SwitchId) -> list[SwitchId]:
        return self._adj[s]

    def validate(self) -> "Topology":
        for a, b in self.links:
            if a not in self.switches or b not in self.switches:
                raise TopologyError(f"link {a}-{b} references an unknown switch")
            if a == b:
                raise TopologyError(f"self-loop on switch {a}")
        if self.switches:
            start = min(self.switches)
            seen = {start}
            queue = deque([start])
            while queue:
                for n in self._adj[queue.popleft()]:
                    if n not in seen:
                        seen.add(n)
                        queue.append(n)
            if seen != set(self.switches):
                missing = sorted(set(self.switches) - seen)
                raise TopologyError(f"topology is disconnected; unreachable switches {missing}")
        for s in self.endpoints:
            if s not in self.switches:
                raise TopologyError(f"endpoint {s} is not a switch")
        all_subnets = sorted((n, s) for s, nets in self.subnets.items() for n in nets)
        for (a, _), (b, _) in zip(all_subnets, all_subnets[1:]):
            if a.overlaps(b):
                raise TopologyError(f"subnets {a} and {b} overlap")
        if self.subnets:
            for s in self.endpoints:
                if not self.subnets.get(s):
                    raise TopologyError(f"endpoint {s} has no subnet")
        return self

    def route(self, s: SwitchId, d: SwitchId) -> tuple[SwitchId, ...]:
        """Shortest hop-count path from ``s`` to ``d``.

        Among equal-length paths the lexicographically smallest switch
        sequence wins. Results are memoised; the topology is immutable.
        """
        key = (s, d)
        cached = self._routes.get(key)
        if cached is not None:
            return cached
        if s not in self._adj or d not in self._adj:
            raise TopologyError(f"unknown switch in route({s}, {d})")
        # BFS from d gives hop distances; walking from s and always taking
        # the smallest neighbour one hop closer yields the lexicographic minimum.
        dist = {d: 0}
        queue = deque([d])
        while queue:
            v = queue.popleft()
            for n in self._adj[v]:
                if n not in dist:
                    dist[n] = dist[v] + 1
                    queue.append(n)
        path = [s]
        v = s
        while v != d:
            v = next(n for n in self._adj[v] if dist.get(n) == dist[v] - 1)
            path.append(v)
        result = tuple(path)
        self._routes[key] = result
        return result

    def host_switch(self, addr: int) -> SwitchId:
        """Endpoint switch whose subnet contains ``addr``."""
        if self._host_index is None:
            self._host_index = {}
            for s, addrs in self.hosts.items():
                for a in addrs:
                    self._host_index[a] = s
        sw = self._host_index.get(addr)
        if sw is None:
            for s, nets in self.subnets.items():
                if any(n.contains(addr) for n in nets):
                    return s
            raise TopologyError(f"address {ipaddress.IPv4Address(addr)} is not attached")
        return sw

    def all_hosts(self) -> list[int]:
        return sorted(a for addrs in self.hosts.values() for a in addrs)

    def port_of(self, switch: SwitchId, toward: SwitchId | int, *, host: bool = False) -> int:
        """OpenFlow-style port index on ``switch``.

        Host ports come first (1..n in address order), then one port per
        link ordered by neighbour id.
        """
        local = sorted(self.hosts.get(switch, ()))
        if host:
            return local.index(toward) + 1
        return len(local) + self._adj[switch].index(toward) + 1


def tree(depth: int, fanout: int) -> Topology:
    """Complete tree; switches numbered breadth-first from 1, leaves are endpoints."""
    if depth < 0 or fanout < 1:
        raise TopologyError("tree needs depth >= 0 and fanout >= 1")
    switches = [1]
    links = []
    level = [1]
    nxt = 2
    for _ in range(depth):
        new_level = []
        for parent in level:
            for _ in range(fanout):
                links.append((parent, nxt))
                switches.append(nxt)
                new_level.append(nxt)
                nxt += 1
        level = new_level
    leaves = frozenset(level)
    return Topology(
        switches=frozenset(switches),
        links=frozenset(links),
        sources=leaves,
        destinations=leaves,
        name=f"tree({depth},{fanout})",
    ).validate()


def parse_topology(text: str, name: str = "") -> Topology:
    switches: set[SwitchId] = set()
    links: set[tuple[SwitchId, SwitchId]] = set()
    subnets: dict[SwitchId, list[Subnet]] = {}
    endpoints: set[SwitchId] = set()
    sources: set[SwitchId] = set()
    destinations: set[SwitchId] = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind, args = parts[0], parts[1:]
        try:
            if kind == "switch" and len(args) == 1:
                switches.add(int(args[0]))
            elif kind == "link" and len(args) == 2:
                a, b = int(args[0]), int(args[1])
                pair = (min(a, b), max(a, b))
                if pair in links:
                    raise TopologyError(f"line {lineno}: duplicate link {a}-{b}")
                links.add(pair)
            elif kind == "subnet" and len(args) == 2:
                subnets.setdefault(int(args[0]), []).append(Subnet.parse(args[1]))
            elif kind == "endpoint" and len(args) == 1:
                endpoints.add(int(args[0]))
            elif kind == "source" and len(args) == 1:
                sources.add(int(args[0]))
            elif kind == "destination" and len(args) == 1:
                destinations.add(int(args[0]))
            else:
                raise TopologyError(f"line {lineno}: cannot parse {raw.strip()!r}")
        except ValueError as exc:
            if isinstance(exc, TopologyError):
                raise
            raise TopologyError(f"line {lineno}: {exc}") from exc
    for s in subnets:
        if s not in switches:
            raise TopologyError(f"subnet on unknown switch {s}")
    if not (endpoints or sources or destinations):
        endpoints = set(subnets)
    topo = Topology(
        switches=frozenset(switches),
        links=frozenset(links),
        subnets={s: tuple(sorted(n)) for s, n in subnets.items()},
        sources=frozenset(endpoints | sources),
        destinations=frozenset(endpoints | destinations),
        name=name,
    )
    return topo.validate()


def load_topology(source: str | Path) -> Topology:
    """Load ``tree(depth, fanout)``, a bundled data name, or a topology file."""
    src = str(source).strip()
    if src.startswith("tree(") and src.endswith(")"):
        try:
            depth, fanout = (int(x) for x in src[5:-1].replace("depth=", "").replace("fanout=", "").split(","))
        except ValueError as exc:
            raise TopologyError(f"bad tree spec {src!r}") from exc
        return tree(depth, fanout)
    path = Path(src)
    if not path.exists():
        bundled = DATA_DIR / f"{src}.topo"
        if bundled.exists():
            path = bundled
        else:
            raise TopologyError(f"no topology file {src!r}")
    return parse_topology(path.read_text(encoding="utf-8"), name=path.stem)


def attach_hosts(t: Topology, hosts_per_switch: int = 10, base: str | int = "10.0.0.0") -> Topology:
    """Give every endpoint a /28 carved sequentially from ``base``.

    Endpoints that already carry subnets (from a topology file) keep them.
    The first ``hosts_per_switch`` addresses of each subnet become active hosts.
    """
    if not 1 <= hosts_per_switch <= (1 << (32 - SUBNET_PREFIX)) - 2:
        raise TopologyError(f"hosts_per_switch={hosts_per_switch} does not fit a /{SUBNET_PREFIX}")
    base_int = int(ipaddress.IPv4Address(base)) if isinstance(base, str) else int(base)
    step = 1 << (32 - SUBNET_PREFIX)
    if base_int % step:
        raise TopologyError(f"base {ipaddress.IPv4Address(base_int)} is not /{SUBNET_PREFIX}-aligned")
    subnets = dict(t.subnets)
    taken = [n for nets in subnets.values() for n in nets]
    nxt = base_int
    for s in sorted(t.endpoints):
        if subnets.get(s):
            continue
        while True:
            if nxt + step - 1 > 0xFFFFFFFF:
                raise TopologyError("IPv4 address space exhausted")
            cand = Subnet(nxt, SUBNET_PREFIX)
            nxt += step
            if not any(cand.overlaps(n) for n in taken):
                break
        subnets[s] = (cand,)
        taken.append(cand)
    hosts = {}
    for s in sorted(t.endpoints):
        addrs = []
        for net in subnets[s]:
            usable = max(net.size - 2, 1)
            count = min(hosts_per_switch, usable)
            first = net.base + 1 if net.size > 2 else net.base
            addrs.extend(range(first, first + count))
        hosts[s] = tuple(addrs)
    return Topology(
        switches=t.switches,
        links=t.links,
        subnets=subnets,
        sources=t.sources,
        destinations=t.destinations,
        hosts=hosts,
        name=t.name,
    ).validate()


def ip(addr: str) -> int:
    return int(ipaddress.IPv4Address(addr))


def ip_str(addr: int) -> str:
    return str(ipaddress.IPv4Address(addr))


def line(ids: Iterable[SwitchId]) -> Topology:
    ids = list(ids)
    return Topology(
        switches=frozenset(ids),
        links=frozenset(zip(ids, ids[1:])),
        sources=frozenset(ids),
        destinations=frozenset(ids),
    ).validate()
