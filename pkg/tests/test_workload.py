import pytest

from flowbalance.sdn_sim import Packet
from flowbalance.topology import Topology, attach_hosts, load_topology
from flowbalance.workload import PingSchedule, WorkloadSpec, generate


def hosts_topology(n_switches=2, hosts=1):
    t = Topology(switches=set(range(1, n_switches + 1)),
                 links={(i, i + 1) for i in range(1, n_switches)},
                 sources=set(range(1, n_switches + 1)), destinations=set(range(1, n_switches + 1)))
    return attach_hosts(t, hosts)


class TestSpec:
    def test_defaults(self):
        w = WorkloadSpec()
        assert (w.peers_per_host, w.pkt_interval_s, w.pkt_size, w.cycles) == (10, 1, 98, 300)

    def test_partial_last_cycle(self):
        assert WorkloadSpec(cycle_s=7, duration_s=300).cycles == 43

    @pytest.mark.parametrize("kw", [dict(cycle_s=0.5), dict(pkt_size=0), dict(pkt_interval_s=0), dict(peers_per_host=-1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            WorkloadSpec(**kw)


class TestGenerate:
    def test_two_hosts_two_directed_flows(self):
        s = generate(hosts_topology(2, 1), WorkloadSpec(duration_s=3, peers_per_host=1))
        (a, b) = sorted(s.flows())
        assert a == (b[1], b[0])
        assert all(len(c) == 2 for c in s.cycle_flows)
        assert len(s) == 6

    def test_too_few_hosts(self):
        with pytest.raises(ValueError):
            generate(hosts_topology(2, 1), WorkloadSpec(peers_per_host=2))

    def test_seeded(self):
        t = attach_hosts(load_topology("tree11"), 10)
        a = list(generate(t, WorkloadSpec(duration_s=5, seed=4)))
        b = list(PingSchedule(t.all_hosts(), WorkloadSpec(duration_s=5, seed=4)))
        assert a == b
        assert a != list(generate(t, WorkloadSpec(duration_s=5, seed=5)))

    def test_order_and_timing(self):
        t = attach_hosts(load_topology("tree11"), 10)
        w = WorkloadSpec(cycle_s=3, duration_s=7, seed=1)
        pkts = list(generate(t, w))
        assert pkts == sorted(pkts, key=lambda p: (p.at, p.src, p.dst))
        assert sorted({p.at for p in pkts}) == [0, 1, 2, 3, 4, 5, 6]
        assert all(p.size == 98 and isinstance(p, Packet) for p in pkts)

    def test_peers_distinct_and_never_self(self):
        t = attach_hosts(load_topology("tree11"), 10)
        s = generate(t, WorkloadSpec(duration_s=4, seed=2))
        for flows in s.cycle_flows:
            assert all(a != b for a, b in flows)
            assert all((b, a) in flows for a, b in flows)
            out = {}
            for a, b in flows:
                out.setdefault(a, set()).add(b)
            assert all(len(v) >= 10 for v in out.values())

    def test_packets_per_flow(self):
        t = attach_hosts(load_topology("tree11"), 10)
        s = generate(t, WorkloadSpec(cycle_s=2, duration_s=5, seed=3))
        counts = {}
        for p in s:
            counts[(p.src, p.dst)] = counts.get((p.src, p.dst), 0) + 1
        assert counts == s.packets_per_flow()
        assert sum(counts.values()) == len(s)

    def test_shorter_cycles_bring_more_flows(self):
        """Seeded Monte-Carlo sign test over 100 seeds: distinct flows per second."""
        t = attach_hosts(load_topology("tree11"), 3)
        wins = ties = 0
        for seed in range(100):
            short = generate(t, WorkloadSpec(cycle_s=1, duration_s=20, peers_per_host=3, seed=seed))
            long = generate(t, WorkloadSpec(cycle_s=5, duration_s=20, peers_per_host=3, seed=seed))
            a, b = len(short.flows()), len(long.flows())
            wins += a > b
            ties += a == b
        assert wins + ties >= 95 and wins > 50
