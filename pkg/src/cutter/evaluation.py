"""Robustness-preservation scoring and static topology comparisons."""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .attacks import ALL_STRATEGIES, AttackSchedule, AttackStrategy, DegradationCurve, attack
from .graph import CompressionSpec, Graph, GraphError, largest_component, remove_nodes

__all__ = [
    "DegradationCurve",
    "RpsReport",
    "TopoReport",
    "rps",
    "rps_mean",
    "topo_report",
    "evaluate",
    "random_deletion",
]


@dataclass(frozen=True)
class RpsReport:
    per_strategy: dict[AttackStrategy, float]
    mean: float
    curves: dict[AttackStrategy, tuple[DegradationCurve, DegradationCurve]]


@dataclass(frozen=True)
class TopoReport:
    degree_diff: float
    clust_diff: float
    pathlen_diff: float
    sp_kernel: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.degree_diff, self.clust_diff, self.pathlen_diff, self.sp_kernel)


def rps(ori: DegradationCurve, cmp: DegradationCurve) -> float:
    """1 minus the mean absolute gap between two normalised curves."""
    if len(ori) != len(cmp):
        raise ValueError(f"curve lengths differ: {len(ori)} vs {len(cmp)}")
    if ori.strategy is not None and cmp.strategy is not None and ori.strategy != cmp.strategy:
        raise ValueError(f"curves come from different strategies: {ori.strategy.value} vs {cmp.strategy.value}")
    if len(ori) == 0:
        raise ValueError("empty curves")
    gap = sum(abs(a - b) for a, b in zip(ori.values, cmp.values))
    return 1.0 - gap / len(ori)


def rps_mean(scores: Mapping[object, float] | Iterable[float]) -> float:
    values = list(scores.values()) if isinstance(scores, Mapping) else list(scores)
    if not values:
        raise ValueError("rps_mean of no strategies")
    return sum(values) / len(values)


# --- topology ---------------------------------------------------------------


def _bfs_all(g: Graph, source: int) -> dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    alive = g.alive
    while queue:
        u = queue.popleft()
        for v in g.adjacency[u]:
            if alive[v] and v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def mean_degree(g: Graph) -> float:
    if g.alive_count == 0:
        raise GraphError("mean degree of an empty graph")
    return float(g.degrees()[g.alive].mean())


def mean_clustering(g: Graph) -> float:
    """Average local clustering; nodes of degree below 2 count as 0."""
    if g.alive_count == 0:
        raise GraphError("clustering of an empty graph")
    alive = g.alive
    total = 0.0
    for u in g.alive_nodes().tolist():
        nbrs = [v for v in g.adjacency[u] if alive[v]]
        k = len(nbrs)
        if k < 2:
            continue
        nset = set(nbrs)
        links = sum(1 for v in nbrs for w in g.adjacency[v] if w in nset and alive[w]) // 2
        total += 2.0 * links / (k * (k - 1))
    return total / g.alive_count


def largest_component_path_length(g: Graph) -> float:
    """Average shortest-path length over pairs inside the largest component (0 for a single node)."""
    comp = largest_component(g)
    if len(comp) < 2:
        return 0.0
    total = sum(sum(_bfs_all(g, s).values()) for s in comp)
    return total / (len(comp) * (len(comp) - 1))


def path_length_histogram(g: Graph) -> Counter[int]:
    """Counts of shortest-path lengths over unordered connected pairs."""
    hist: Counter[int] = Counter()
    for s in g.alive_nodes().tolist():
        for v, d in _bfs_all(g, s).items():
            if v > s:
                hist[d] += 1
    return hist


def sp_kernel(a: Graph, b: Graph) -> float:
    """Cosine-normalised shortest-path kernel with a delta kernel on path lengths."""
    ha, hb = path_length_histogram(a), path_length_histogram(b)
    kab = sum(c * hb.get(d, 0) for d, c in ha.items())
    kaa = sum(c * c for c in ha.values())
    kbb = sum(c * c for c in hb.values())
    if kaa == 0 and kbb == 0:
        return 1.0
    if kaa == 0 or kbb == 0:
        return 0.0
    return min(1.0, kab / math.sqrt(kaa * kbb))


def topo_report(original: Graph, compressed: Graph) -> TopoReport:
    if original.alive_count == 0 or compressed.alive_count == 0:
        raise GraphError("topology comparison needs two nonempty graphs")
    return TopoReport(
        abs(mean_degree(original) - mean_degree(compressed)),
        abs(mean_clustering(original) - mean_clustering(compressed)),
        abs(largest_component_path_length(original) - largest_component_path_length(compressed)),
        sp_kernel(original, compressed),
    )


# --- pipeline ---------------------------------------------------------------


def evaluate(
    original: Graph,
    compressed: Graph,
    strategies: Iterable[AttackStrategy | str] = ALL_STRATEGIES,
    sched: AttackSchedule = AttackSchedule(),
) -> RpsReport:
    """Attack both graphs with each strategy and score how well the curves agree."""
    chosen = [AttackStrategy.parse(s) if isinstance(s, str) else s for s in strategies]
    if not chosen:
        raise ValueError("no attack strategies given")
    per: dict[AttackStrategy, float] = {}
    curves = {}
    for s in chosen:
        c_ori = attack(original, s, sched, "original")
        c_cmp = attack(compressed, s, sched, "compressed")
        per[s] = rps(c_ori, c_cmp)
        curves[s] = (c_ori, c_cmp)
    return RpsReport(per, rps_mean(per), curves)


def random_deletion(g: Graph, rho: float, rng: np.random.Generator) -> tuple[int, ...]:
    """Uniformly random removal set of the compression budget for ``rho``."""
    count = CompressionSpec.budget(rho, g.alive_count)
    alive = g.alive_nodes()
    return tuple(int(u) for u in rng.choice(alive, size=count, replace=False))


def compressed_graph(g: Graph, removal: Iterable[int]) -> Graph:
    return remove_nodes(g, removal)
