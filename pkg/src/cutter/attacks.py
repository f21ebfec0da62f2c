"""Targeted node-removal attacks and the centrality scores that drive them.

Every strategy ranks the alive nodes once, by descending score with ties
broken by ascending node id, and the attack then removes nodes in that
static order.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import ConnectivityTracker, Graph, GraphError, connected_components

# Scores are rounded before ranking so that ties survive summation-order noise.
SCORE_DECIMALS = 9


class AttackStrategy(str, enum.Enum):
    DEGREE = "degree"
    COLLECTIVE_INFLUENCE = "collective_influence"
    EIGENVECTOR = "eigenvector"
    BETWEENNESS = "betweenness"
    CLOSENESS = "closeness"
    PERCOLATION = "percolation"

    @classmethod
    def parse(cls, name: str) -> AttackStrategy:
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown strategy {name!r}; valid names: {valid}") from None


ALL_STRATEGIES: tuple[AttackStrategy, ...] = tuple(AttackStrategy)


@dataclass(frozen=True)
class AttackPlan:
    ranking: tuple[int, ...]
    strategy: AttackStrategy


@dataclass(frozen=True)
class AttackSchedule:
    step_fraction: float = 0.01
    max_fraction: float = 0.40

    def __post_init__(self) -> None:
        if not 0.0 < self.step_fraction <= self.max_fraction <= 1.0:
            raise ValueError("schedule requires 0 < step_fraction <= max_fraction <= 1")

    @property
    def steps(self) -> int:
        return int(math.floor(self.max_fraction / self.step_fraction + 1e-9))

    def batch_size(self, alive_count: int) -> int:
        return max(1, int(math.ceil(self.step_fraction * alive_count - 1e-9)))


@dataclass(frozen=True)
class DegradationCurve:
    values: tuple[float, ...]
    strategy: AttackStrategy | None = None
    graph_tag: str = "original"

    def __len__(self) -> int:
        return len(self.values)


# --- centrality scores ------------------------------------------------------
# Each returns a length-N float array; dead nodes score 0 and never get ranked.


def degree_scores(g: Graph) -> np.ndarray:
    return g.degrees().astype(float)


def _bfs_distances(g: Graph, source: int, cutoff: int | None = None) -> dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    alive, adjacency = g.alive, g.adjacency
    while queue:
        u = queue.popleft()
        d = dist[u]
        if cutoff is not None and d >= cutoff:
            continue
        for v in adjacency[u]:
            if alive[v] and v not in dist:
                dist[v] = d + 1
                queue.append(v)
    return dist


def collective_influence_scores(g: Graph, radius: int = 2) -> np.ndarray:
    """CI(i) = (k_i - 1) * sum of (k_j - 1) over nodes at distance exactly ``radius``."""
    deg = g.degrees()
    scores = np.zeros(g.node_count)
    for i in g.alive_nodes().tolist():
        if deg[i] == 0:
            continue
        dist = _bfs_distances(g, i, cutoff=radius)
        frontier = sum(int(deg[j]) - 1 for j, d in dist.items() if d == radius)
        scores[i] = (int(deg[i]) - 1) * frontier
    return scores


def eigenvector_scores(g: Graph, tol: float = 1e-13, max_iter: int = 20000) -> np.ndarray:
    """Leading adjacency eigenvector on the largest component (unit L2 norm).

    Power iteration runs on ``A + I``, which has the same eigenvectors as
    ``A`` but no oscillation on bipartite components.
    """
    scores = np.zeros(g.node_count)
    lab = connected_components(g)
    if not lab.sizes:
        return scores
    best = int(np.argmax(lab.sizes))
    members = np.array(sorted(u for u, c in lab.label_of.items() if c == best))
    if len(members) == 1:
        scores[members[0]] = 1.0
        return scores
    pos = {int(u): k for k, u in enumerate(members)}
    e = g.alive_edges()
    keep = np.array([int(u) in pos for u in e[:, 0]], dtype=bool) if len(e) else np.zeros(0, bool)
    rows = np.array([pos[int(u)] for u in e[keep, 0]])
    cols = np.array([pos[int(v)] for v in e[keep, 1]])
    m = len(members)
    a = sp.coo_matrix(
        (np.ones(2 * len(rows)), (np.r_[rows, cols], np.r_[cols, rows])), shape=(m, m)
    ).tocsr() + sp.identity(m, format="csr")
    x = np.full(m, 1.0 / math.sqrt(m))
    for _ in range(max_iter):
        nxt = a @ x
        nxt /= np.linalg.norm(nxt)
        done = np.max(np.abs(nxt - x)) < tol
        x = nxt
        if done:
            break
    scores[members] = x
    return scores


def _brandes_pass(g: Graph, s: int) -> tuple[list[int], dict[int, list[int]], dict[int, float]]:
    alive, adjacency = g.alive, g.adjacency
    order: list[int] = []
    preds: dict[int, list[int]] = {s: []}
    sigma: dict[int, float] = {s: 1.0}
    dist = {s: 0}
    queue = deque([s])
    while queue:
        v = queue.popleft()
        order.append(v)
        dv = dist[v]
        for w in adjacency[v]:
            if not alive[w]:
                continue
            if w not in dist:
                dist[w] = dv + 1
                sigma[w] = 0.0
                preds[w] = []
                queue.append(w)
            if dist[w] == dv + 1:
                sigma[w] += sigma[v]
                preds[w].append(v)
    return order, preds, sigma


def _accumulate(g: Graph, source_weight: np.ndarray | None) -> np.ndarray:
    scores = np.zeros(g.node_count)
    for s in g.alive_nodes().tolist():
        order, preds, sigma = _brandes_pass(g, s)
        delta = dict.fromkeys(order, 0.0)
        for w in reversed(order):
            coeff = (1.0 + delta[w]) / sigma[w]
            for v in preds[w]:
                delta[v] += sigma[v] * coeff
            if w != s:
                weight = 1.0 if source_weight is None else source_weight[s]
                scores[w] += weight * delta[w]
    return scores


def betweenness_scores(g: Graph) -> np.ndarray:
    """Unnormalised shortest-path betweenness (each unordered pair counted once)."""
    return _accumulate(g, None) / 2.0


def closeness_scores(g: Graph) -> np.ndarray:
    """Harmonic closeness: sum of 1/d(u, v) over reachable v != u."""
    scores = np.zeros(g.node_count)
    for u in g.alive_nodes().tolist():
        dist = _bfs_distances(g, u)
        scores[u] = sum(1.0 / d for d in dist.values() if d > 0)
    return scores


def percolation_states(g: Graph) -> np.ndarray:
    deg = g.degrees().astype(float)
    top = deg.max() if len(deg) else 0.0
    return deg / top if top > 0 else np.zeros_like(deg)


def percolation_scores(g: Graph, states: np.ndarray | None = None) -> np.ndarray:
    """Percolation centrality with node states ``x_i = deg(i) / max deg``.

    PC(v) = 1/(n-2) * sum_{s != v != r} sigma_sr(v)/sigma_sr * x_s / (sum_i x_i - x_v)
    """
    x = percolation_states(g) if states is None else np.asarray(states, dtype=float)
    n = g.alive_count
    raw = _accumulate(g, x)
    total = float(x[g.alive].sum())
    scores = np.zeros(g.node_count)
    for v in g.alive_nodes().tolist():
        denom = total - x[v]
        if denom > 0 and n > 2:
            scores[v] = raw[v] / denom / (n - 2)
    return scores


SCORERS = {
    AttackStrategy.DEGREE: degree_scores,
    AttackStrategy.COLLECTIVE_INFLUENCE: collective_influence_scores,
    AttackStrategy.EIGENVECTOR: eigenvector_scores,
    AttackStrategy.BETWEENNESS: betweenness_scores,
    AttackStrategy.CLOSENESS: closeness_scores,
    AttackStrategy.PERCOLATION: percolation_scores,
}


def rank_by_scores(g: Graph, scores: np.ndarray) -> tuple[int, ...]:
    alive = g.alive_nodes()
    rounded = np.round(scores[alive], SCORE_DECIMALS)
    # lexsort: last key is primary
    order = np.lexsort((alive, -rounded))
    return tuple(int(u) for u in alive[order])


def rank_nodes(g: Graph, strategy: AttackStrategy | str) -> AttackPlan:
    strategy = AttackStrategy.parse(strategy) if isinstance(strategy, str) else strategy
    if g.alive_count < 1:
        raise GraphError("cannot rank an empty graph")
    return AttackPlan(rank_by_scores(g, SCORERS[strategy](g)), strategy)


def execute_attack(
    g: Graph, plan: AttackPlan, sched: AttackSchedule = AttackSchedule(), graph_tag: str = "original"
) -> DegradationCurve:
    """Remove ranked nodes in batches and record normalised connectivity.

    A graph with no connected pair has nothing to degrade; its curve is 1.0
    followed by zeros.
    """
    tracker = ConnectivityTracker(g)
    base = tracker.connectivity
    batch = sched.batch_size(g.alive_count)
    values = [1.0]
    cursor = 0
    ranking = plan.ranking
    for _ in range(sched.steps):
        if base == 0 or cursor >= len(ranking):
            values.append(0.0)
            continue
        for u in ranking[cursor:cursor + batch]:
            tracker.remove(u)
        cursor += batch
        values.append(tracker.connectivity / base)
    return DegradationCurve(tuple(values), plan.strategy, graph_tag)


def attack(
    g: Graph, strategy: AttackStrategy | str, sched: AttackSchedule = AttackSchedule(), graph_tag: str = "original"
) -> DegradationCurve:
    return execute_attack(g, rank_nodes(g, strategy), sched, graph_tag)
