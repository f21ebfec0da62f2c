"""Robustness-preserving graph compression with two cooperating DQN agents.

A vital-node agent learns which removals hurt pairwise connectivity most; a
redundancy agent, conditioned on those vital nodes, learns which nodes can be
deleted while keeping the graph's attack response intact.
"""

from .attacks import AttackSchedule, AttackStrategy, attack
from .config import RunConfig
from .evaluation import evaluate, rps, rps_mean, topo_report
from .graph import Graph, load_edge_list, pairwise_connectivity, write_edge_list
from .training import Trainer, compress

__all__ = [
    "AttackSchedule",
    "AttackStrategy",
    "Graph",
    "RunConfig",
    "Trainer",
    "attack",
    "compress",
    "evaluate",
    "load_edge_list",
    "pairwise_connectivity",
    "rps",
    "rps_mean",
    "topo_report",
    "write_edge_list",
]

__version__ = "0.1.0"
