import pytest

from flowbalance.topology import Subnet, Topology, ip


def net(cidr: str) -> Subnet:
    return Subnet.parse(cidr)


@pytest.fixture
def triangle() -> Topology:
    """Three switches in a triangle; switch 1 carries two subnets.

    Sources are {2, 3} and destinations {1, 3}, which gives five directed
    aggregated flows, four of them crossing switch 1.
    """
    return Topology(
        switches={1, 2, 3},
        links={(1, 2), (1, 3), (2, 3)},
        subnets={
            1: (net("10.0.1.0/28"), net("10.0.1.32/27")),
            2: (net("10.0.2.0/29"),),
            3: (net("10.0.3.0/26"),),
        },
        sources={2, 3},
        destinations={1, 3},
    ).validate()


@pytest.fixture
def addr():
    return ip


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
