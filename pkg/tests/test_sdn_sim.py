import random

import pytest
from hypothesis import given, settings, strategies as st

from flowbalance.sdn_sim import (
    ACTIVE_PRIO, DISCOVERY_PRIO, DROP, FORWARD, PACKET_IN, ROUTING_PRIO, Action, FlowEntry,
    FlowKey, FlowMod, FlowTable, FullTableError, Origin, Packet, PacketIn, Simulation, Switch,
    controller_reactive_route, expire, prefix_mask,
)
from flowbalance.topology import Topology, attach_hosts, ip


def key(src: str, dst: str) -> FlowKey:
    s, sl = src.split("/")
    d, dl = dst.split("/")
    return FlowKey(ip(s), int(sl), ip(d), int(dl))


def entry(k, prio, **kw) -> FlowEntry:
    return FlowEntry(k, prio, **kw)


def scan_oracle(installed: list[tuple[FlowEntry, float]], src: int, dst: int):
    """Exhaustive scan: priority, then specificity, then earliest install, then insertion order."""
    best = None
    best_rank = None
    for order, (e, at) in enumerate(installed):
        if not e.key.matches(src, dst):
            continue
        rank = (-e.priority, -e.key.specificity, at, order)
        if best_rank is None or rank < best_rank:
            best, best_rank = e, rank
    return best


def random_table_disagreements(seed: int) -> int:
    """Fill a table with up to 200 random entries; count lookups that differ from the scan oracle."""
    rng = random.Random(seed)
    n = rng.randint(0, 200)
    t = FlowTable(200)
    installed = []
    # small address universe so wildcards and exact keys collide often
    for i in range(n):
        sl, dl = rng.choice([0, 24, 28, 30, 32]), rng.choice([0, 24, 28, 30, 32])
        s = (ip("10.0.0.0") | rng.randrange(256)) & prefix_mask(sl)
        d = (ip("10.0.0.0") | rng.randrange(256)) & prefix_mask(dl)
        e = entry(FlowKey(s, sl, d, dl), rng.choice([40, 49, 50]))
        at = float(rng.randrange(5))
        if t.find(e.key, e.priority) is not None:
            continue
        t.install(e, now=at)
        installed.append((e, at))
    bad = 0
    for _ in range(20):
        src = ip("10.0.0.0") | rng.randrange(256)
        dst = ip("10.0.0.0") | rng.randrange(256)
        bad += t.lookup(src, dst) is not scan_oracle(installed, src, dst)
    return bad


def line_topology(n: int, hosts: int = 2) -> Topology:
    t = Topology(switches=set(range(1, n + 1)), links={(i, i + 1) for i in range(1, n)},
                 sources=set(range(1, n + 1)), destinations=set(range(1, n + 1)))
    return attach_hosts(t, hosts)


class TestFlowKey:
    def test_wildcard_matches_anything(self):
        k = FlowKey(0, 0, 0, 0)
        assert k.matches(ip("1.2.3.4"), ip("5.6.7.8"))

    def test_prefix(self):
        k = key("10.0.0.0/24", "10.0.1.0/28")
        assert k.matches(ip("10.0.0.200"), ip("10.0.1.15"))
        assert not k.matches(ip("10.0.0.200"), ip("10.0.1.16"))
        assert k.specificity == 52

    def test_host_bits_rejected(self):
        with pytest.raises(ValueError):
            key("10.0.0.1/24", "10.0.1.0/24")
        with pytest.raises(ValueError):
            FlowKey(0, 33, 0, 0)

    def test_fast_constructors_equal_checked_ones(self):
        assert FlowKey.exact(5, 9) == FlowKey(5, 32, 9, 32)
        assert FlowKey.to_host(9) == FlowKey(0, 0, 9, 32)
        assert hash(FlowKey.exact(5, 9)) == hash(FlowKey(5, 32, 9, 32))

    def test_prefix_mask(self):
        assert prefix_mask(0) == 0 and prefix_mask(28) == 0xFFFFFFF0 and prefix_mask(32) == 0xFFFFFFFF


class TestMatch:
    def test_priority_wins(self):
        t = FlowTable(10)
        agg = entry(key("10.0.0.0/24", "10.0.1.0/24"), 49)
        exact = entry(key("10.0.0.1/32", "10.0.1.1/32"), 50)
        t.install(agg)
        t.install(exact)
        assert t.match(Packet(ip("10.0.0.1"), ip("10.0.1.1"), 98, 0)) is exact

    def test_empty_table_misses(self):
        assert FlowTable(1).match(Packet(1, 2, 98, 0)) is None

    def test_specificity_breaks_priority_tie(self):
        t = FlowTable(10)
        wide = entry(key("10.0.0.0/24", "10.0.1.0/24"), 49)
        narrow = entry(key("10.0.0.0/28", "10.0.1.0/28"), 49)
        t.install(wide)
        t.install(narrow)
        assert t.match(Packet(ip("10.0.0.1"), ip("10.0.1.1"), 98, 0)) is narrow

    def test_age_breaks_remaining_tie(self):
        t = FlowTable(10)
        a = entry(key("10.0.0.0/24", "0.0.0.0/0"), 10)
        b = entry(key("0.0.0.0/0", "10.0.1.0/24"), 10)
        t.install(a, now=5.0)
        t.install(b, now=1.0)
        assert t.match(Packet(ip("10.0.0.1"), ip("10.0.1.1"), 98, 0)) is b

    def test_hit_updates_counters(self):
        t = FlowTable(2)
        e = entry(FlowKey.exact(1, 2), 50)
        t.install(e, now=1.0)
        t.match(Packet(1, 2, 98, 3.0))
        t.match(Packet(1, 2, 60, 4.5))
        assert (e.packets, e.bytes, e.first_matched_at, e.last_matched_at) == (2, 158, 3.0, 4.5)

    def test_lookup_does_not_count(self):
        t = FlowTable(2)
        e = entry(FlowKey.exact(1, 2), 50)
        t.install(e)
        assert t.lookup(1, 2) is e and e.packets == 0

    @pytest.mark.parametrize("seed", range(1000))
    def test_agrees_with_scan_oracle(self, seed):
        assert random_table_disagreements(seed) == 0

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from(["install", "remove", "lookup"]),
                              st.integers(0, 7), st.integers(0, 7),
                              st.sampled_from([(32, 32), (0, 32), (29, 29), (0, 0)]),
                              st.sampled_from([40, 49, 50])), max_size=80))
    def test_interleaved_operations(self, ops):
        """Installs, removals and lookups in any order stay consistent with the scan."""
        t = FlowTable(12)
        live: list[tuple[FlowEntry, float]] = []
        for now, (op, a, b, (sl, dl), prio) in enumerate(ops):
            src, dst = ip("10.0.0.0") + a, ip("10.0.0.0") + b
            if op == "lookup":
                assert t.lookup(src, dst) is scan_oracle(live, src, dst)
                continue
            k = FlowKey(src & prefix_mask(sl), sl, dst & prefix_mask(dl), dl)
            if op == "install":
                e = entry(k, prio)
                try:
                    old = t.install(e, now=float(now))
                except FullTableError:
                    continue
                if old is not None:
                    live = [(x, at) if x is not old else (e, float(now)) for x, at in live]
                else:
                    live.append((e, float(now)))
            else:
                victim = t.find(k, prio)
                if victim is not None:
                    assert t.remove(victim)
                    live = [(x, at) for x, at in live if x is not victim]
            assert len(t) == len(live) <= t.capacity


class TestInstall:
    def test_capacity_one(self):
        t = FlowTable(1)
        t.install(entry(FlowKey.exact(1, 2), 50))
        assert t.free == 0

    def test_full_table_rejects(self):
        t = FlowTable(1)
        first = entry(FlowKey.exact(1, 2), 50)
        t.install(first)
        with pytest.raises(FullTableError):
            t.install(entry(FlowKey.exact(1, 3), 50))
        assert t.entries() == [first]

    def test_replacement_in_full_table(self):
        t = FlowTable(1)
        old = entry(FlowKey.exact(1, 2), 50)
        t.install(old)
        t.match(Packet(1, 2, 98, 0))
        new = entry(FlowKey.exact(1, 2), 50, hard_timeout=30)
        assert t.install(new, now=7.0) is old
        assert t.entries() == [new] and new.packets == 0 and len(t) == 1
        assert not old.live and new.live

    def test_same_key_other_priority_takes_a_slot(self):
        t = FlowTable(2)
        t.install(entry(FlowKey.exact(1, 2), 50))
        t.install(entry(FlowKey.exact(1, 2), 40))
        assert t.free == 0

    def test_remove_unknown(self):
        t = FlowTable(2)
        assert not t.remove(entry(FlowKey.exact(1, 2), 50))

    def test_capacity_must_be_positive(self):
        with pytest.raises(ValueError):
            FlowTable(0)


class TestExpire:
    def test_hard_timeout_reports(self):
        t = FlowTable(4, switch=7)
        e = entry(FlowKey.exact(1, 2), ACTIVE_PRIO, hard_timeout=60, notify_on_remove=True, origin=Origin.ACTIVE)
        t.install(e, now=0.0)
        assert expire(t, 59.999) == []
        (msg,) = expire(t, 60.0)
        assert msg.switch == 7 and msg.entry.key == e.key and len(t) == 0

    def test_static_entry_stays(self):
        t = FlowTable(4)
        t.install(entry(key("10.0.0.0/28", "10.0.0.16/28"), DISCOVERY_PRIO, action=Action.CONTROLLER))
        assert expire(t, 1e9) == [] and len(t) == 1

    def test_routing_entry_silent(self):
        t = FlowTable(4)
        t.install(entry(FlowKey.exact(1, 2), ROUTING_PRIO, idle_timeout=5), now=0.0)
        t.match(Packet(1, 2, 98, 3.0))
        assert expire(t, 7.9) == [] and len(t) == 1
        assert expire(t, 8.0) == [] and len(t) == 0

    def test_snapshot_carries_final_counters(self):
        t = FlowTable(4)
        e = entry(FlowKey.exact(1, 2), ACTIVE_PRIO, hard_timeout=60, notify_on_remove=True)
        t.install(e)
        for i in range(25):
            t.match(Packet(1, 2, 98, float(i)))
        (msg,) = expire(t, 60.0)
        assert (msg.entry.packets, msg.entry.bytes) == (25, 2450)


class TestSwitch:
    def test_outcomes(self):
        sw = Switch(1, 4)
        assert sw.handle_packet(Packet(1, 2, 98, 0), 0) == (PACKET_IN, None)
        disc = entry(FlowKey(0, 0, 0, 0), DISCOVERY_PRIO, action=Action.CONTROLLER, origin=Origin.DISCOVERY)
        sw.table.install(disc)
        assert sw.handle_packet(Packet(1, 2, 98, 0), 0) == (PACKET_IN, disc)
        act = entry(FlowKey.exact(1, 2), ACTIVE_PRIO, origin=Origin.ACTIVE)
        sw.table.install(act)
        assert sw.handle_packet(Packet(1, 2, 98, 0), 0) == (FORWARD, act)
        assert act.packets == 1 and act.bytes == 98
        drop = entry(FlowKey.exact(1, 3), ACTIVE_PRIO, action=Action.DROP)
        sw.table.install(drop)
        assert sw.handle_packet(Packet(1, 3, 98, 0), 0) == (DROP, drop)


class TestReactiveRouting:
    def setup_method(self):
        self.t = line_topology(3)
        self.h1, self.h3 = self.t.hosts[1][0], self.t.hosts[3][0]

    def miss(self, tables):
        return PacketIn(1, Packet(self.h1, self.h3, 98, 0.0), None, 0.0)

    def test_one_mod_per_route_switch(self):
        tables = {s: FlowTable(10, s) for s in self.t.switches}
        mods = controller_reactive_route(self.t, tables, self.miss(tables))
        assert [m.switch for m in mods] == [1, 2, 3]
        assert all(m.entry.key == FlowKey.exact(self.h1, self.h3) for m in mods)
        assert all(m.entry.priority == ROUTING_PRIO and m.entry.idle_timeout == 5.0 for m in mods)
        assert [m.entry.next_hop for m in mods] == [2, 3, None]

    def test_idempotent(self):
        tables = {s: FlowTable(10, s) for s in self.t.switches}
        for m in controller_reactive_route(self.t, tables, self.miss(tables)):
            tables[m.switch].install(m.entry)
        assert controller_reactive_route(self.t, tables, self.miss(tables)) == []

    def test_destination_mode(self):
        tables = {s: FlowTable(10, s) for s in self.t.switches}
        mods = controller_reactive_route(self.t, tables, self.miss(tables), match="destination")
        assert all(m.entry.key == FlowKey.to_host(self.h3) for m in mods)

    def test_full_switch_retriggers(self):
        sim = Simulation(self.t, {1: 10, 2: 1, 3: 10})
        sim.tables[2].install(entry(FlowKey.exact(1, 1), 1))
        sim.now = 0.0
        sim.inject(Packet(self.h1, self.h3, 98, 0.0))
        c = sim.counters
        # miss at switch 1: three flow-mods, the one for switch 2 is rejected;
        # the packet then misses again at switch 2, whose retry is rejected too
        assert (c.flow_mods, c.full_table_errors, c.packet_in_routing) == (4, 2, 2)
        assert len(sim.tables[1]) == 1 and len(sim.tables[3]) == 1
        sim.inject(Packet(self.h1, self.h3, 98, 1.0))
        assert (c.flow_mods, c.full_table_errors, c.packet_in_routing) == (5, 3, 3)
        assert c.delivered == 2


class TestSimulation:
    def test_empty_workload(self):
        sim = Simulation(line_topology(2), 10, record_events=True)
        sim.step(300)
        assert sim.events == [] and sim.now == 300

    def test_delivery_and_idle_expiry(self):
        t = line_topology(3)
        h1, h3 = t.hosts[1][0], t.hosts[3][0]
        sim = Simulation(t, 10, [Packet(h1, h3, 98, 0.0), Packet(h1, h3, 98, 1.0)], routing_idle=5)
        sim.step(2)
        assert sim.counters.delivered == 2 and sim.counters.packet_in_routing == 1
        assert sim.total_entries() == 3
        sim.step(6.0)
        assert sim.total_entries() == 0
        assert sim.packets_generated(h1, h3) == 2

    def test_event_ordering_at_equal_time(self):
        t = line_topology(2)
        h1, h2 = t.hosts[1][0], t.hosts[2][0]
        seen = []
        sim = Simulation(t, 10, [Packet(h1, h2, 98, 5.0)])
        sim.at(5.0, lambda now: seen.append(("tick", sim.counters.packets)), tick=True)
        sim.at(5.0, lambda now: seen.append(("action", sim.counters.packets)))
        sim.step(10)
        assert seen == [("action", 0), ("tick", 1)]

    def test_active_shadows_discovery(self):
        t = line_topology(2)
        h1, h2 = t.hosts[1][0], t.hosts[2][0]
        sim = Simulation(t, 10)
        disc = entry(FlowKey(0, 0, 0, 0), DISCOVERY_PRIO, action=Action.CONTROLLER, origin=Origin.DISCOVERY)
        act = entry(FlowKey.exact(h1, h2), ACTIVE_PRIO, next_hop=2, origin=Origin.ACTIVE)
        sim.send_flow_mod(FlowMod(1, disc, 0.0))
        sim.send_flow_mod(FlowMod(1, act, 0.0))
        sim.inject(Packet(h1, h2, 98, 0.0))
        assert sim.counters.packet_in_monitoring == 0 and act.packets == 1

    def test_discovery_packet_is_forwarded_after_trap(self):
        t = line_topology(2)
        h1, h2 = t.hosts[1][0], t.hosts[2][0]

        class App:
            def __init__(self):
                self.msgs = []

            def on_packet_in(self, msg):
                self.msgs.append(msg)

            def on_flow_removed(self, msg):
                pass

        app = App()
        sim = Simulation(t, 10, app=app)
        disc = entry(FlowKey(0, 0, 0, 0), DISCOVERY_PRIO, action=Action.CONTROLLER, origin=Origin.DISCOVERY)
        sim.send_flow_mod(FlowMod(2, disc, 0.0))
        sim.inject(Packet(h1, h2, 98, 0.0))
        (msg,) = app.msgs
        assert msg.origin is Origin.DISCOVERY and msg.switch == 2
        # no forwarding entry was installed, so the packet is packet-out'ed and still delivered
        assert sim.counters.delivered == 1

    def test_capacity_dict_and_check(self):
        sim = Simulation(line_topology(2), {1: 1, 2: 3})
        assert sim.free_entries() == {1: 1, 2: 3}
        sim.check_capacity()

    def test_bad_routing_mode(self):
        with pytest.raises(ValueError):
            Simulation(line_topology(2), 10, routing_match="prefix")

    def test_event_log_deterministic(self):
        t = line_topology(3)
        hs = t.all_hosts()
        pkts = [Packet(a, b, 98, float(i)) for i, (a, b) in enumerate(zip(hs, reversed(hs))) if a != b]
        logs = []
        for _ in range(2):
            sim = Simulation(t, 2, pkts, record_events=True)
            sim.step(50)
            logs.append(sim.event_log_jsonl())
        assert logs[0] == logs[1] and "full_table_error" in logs[0]
