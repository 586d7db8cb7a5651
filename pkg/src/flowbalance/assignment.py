"""Placement of flow-discovery entries on switches.

``assign_balanced`` is the greedy heuristic: flows are taken heaviest
first and each goes to the switch on its route with the most remaining
free entries. ``assign_baseline`` keeps every entry on an observed switch.
``assign_optimal_bruteforce`` is an exhaustive oracle for small instances.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass
from typing import Iterable, Mapping

from .discovery import AggregatedFlow, RouteMap
from .topology import SwitchId

Assignment = dict[AggregatedFlow, SwitchId]

BRUTEFORCE_MAX_FLOWS = 10
BRUTEFORCE_MAX_SPACE = 10**6


@dataclass(frozen=True)
class LoadModel:
    mu: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must lie in [0, 1], got {self.mu}")


def load_of(f: AggregatedFlow, m: LoadModel) -> float:
    """Expected table entries caused by one discovery entry: itself plus its active flows."""
    return 1.0 + m.mu * f.src_subnet.size * f.dst_subnet.size


def assign_balanced(
    flows: Iterable[AggregatedFlow],
    routes: RouteMap,
    free: Mapping[SwitchId, float],
    m: LoadModel,
) -> Assignment:
    residual = {s: float(c) for s, c in free.items()}
    order = sorted(flows, key=lambda f: (-load_of(f, m), f))
    result: Assignment = {}
    for f in order:
        # max residual, ties to the smallest switch id
        target = min(routes[f], key=lambda s: (-residual.get(s, 0.0), s))
        result[f] = target
        residual[target] = residual.get(target, 0.0) - load_of(f, m)
    return result


def assign_baseline(
    flows: Iterable[AggregatedFlow],
    flow_to_obs: Mapping[AggregatedFlow, Iterable[SwitchId]],
    seed: int,
) -> Assignment:
    rng = random.Random(seed)
    result: Assignment = {}
    for f in sorted(flows):
        choices = sorted(flow_to_obs[f])
        if not choices:
            raise ValueError(f"flow {f} crosses no OBS")
        result[f] = choices[0] if len(choices) == 1 else rng.choice(choices)
    return result


def placement_loads(
    assignment: Mapping[AggregatedFlow, SwitchId], m: LoadModel
) -> dict[SwitchId, float]:
    parts: dict[SwitchId, list[float]] = {}
    for f, s in assignment.items():
        parts.setdefault(s, []).append(load_of(f, m))
    # fsum is exactly rounded, so the result does not depend on flow order
    return {s: math.fsum(p) for s, p in parts.items()}


def deficit(
    assignment: Mapping[AggregatedFlow, SwitchId],
    free: Mapping[SwitchId, float],
    m: LoadModel,
) -> tuple[float, float]:
    """(max over switches of load - free, total overflow) for an assignment."""
    loads = placement_loads(assignment, m)
    worst = max((loads.get(s, 0.0) - c for s, c in free.items()), default=0.0)
    overflow = math.fsum(max(0.0, loads.get(s, 0.0) - c) for s, c in free.items())
    return worst, overflow


class InstanceTooLarge(ValueError):
    pass


def assign_optimal_bruteforce(
    flows: Iterable[AggregatedFlow],
    routes: RouteMap,
    free: Mapping[SwitchId, float],
    m: LoadModel,
) -> Assignment:
    flows = sorted(flows)
    if len(flows) > BRUTEFORCE_MAX_FLOWS:
        raise InstanceTooLarge(f"{len(flows)} flows exceeds {BRUTEFORCE_MAX_FLOWS}")
    choices = [sorted(set(routes[f])) for f in flows]
    if math.prod(len(c) for c in choices) > BRUTEFORCE_MAX_SPACE:
        raise InstanceTooLarge("search space exceeds 1e6 assignments")
    switches = sorted(set(free) | {s for c in choices for s in c})
    caps = {s: float(free.get(s, 0.0)) for s in switches}
    loads = [load_of(f, m) for f in flows]
    best = None
    best_obj = None
    # itertools.product enumerates in lexicographic order, so the first
    # strict improvement found is also the lexicographically smallest
    for combo in itertools.product(*choices):
        used = dict.fromkeys(switches, 0.0)
        for s, w in zip(combo, loads):
            used[s] += w
        worst = max(used[s] - caps[s] for s in switches)
        overflow = sum(max(0.0, used[s] - caps[s]) for s in switches)
        obj = (worst, overflow)
        if best_obj is None or obj < best_obj:
            best, best_obj = combo, obj
    return dict(zip(flows, best or ()))
