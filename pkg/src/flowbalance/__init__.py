"""Balanced flow-statistics collection for simulated OpenFlow networks."""

from .assignment import LoadModel, assign_balanced, assign_baseline
from .discovery import AggregatedFlow, DiscoveryPlan, build_plan, select_monitored
from .experiment import ExperimentConfig, RunResult, gini, run, sweep
from .netflow import Exporter, StatsRecord, build_datagram, decode_datagram
from .sdn_sim import FlowEntry, FlowKey, FlowTable, Simulation
from .topology import Topology, load_topology, parse_topology

__version__ = "0.1.0"

__all__ = [
    "AggregatedFlow", "DiscoveryPlan", "ExperimentConfig", "Exporter", "FlowEntry", "FlowKey",
    "FlowTable", "LoadModel", "RunResult", "Simulation", "StatsRecord", "Topology",
    "assign_balanced", "assign_baseline", "build_datagram", "build_plan", "decode_datagram",
    "gini", "load_topology", "parse_topology", "run", "select_monitored", "sweep",
]
