"""Undirected graph snapshots with logical node deletion.

A :class:`Graph` is immutable. Removing nodes clears bits in a copy of the
alive mask and shares the adjacency with the parent snapshot, so long removal
sequences stay cheap and every intermediate state remains valid.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graph input or invalid node operations."""


@dataclass(frozen=True, eq=False)
class Graph:
    node_count: int
    adjacency: tuple[tuple[int, ...], ...]
    alive: np.ndarray
    labels: tuple[int, ...] | None = None
    _edges: np.ndarray = field(default=None, repr=False)
    _arcs: list = field(default_factory=list, repr=False)  # lazily filled, shared with derived snapshots

    def __post_init__(self) -> None:
        if len(self.adjacency) != self.node_count or self.alive.shape != (self.node_count,):
            raise GraphError("adjacency/alive mask do not match node_count")
        self.alive.setflags(write=False)
        if self._edges is None:
            pairs = [(u, v) for u, nbrs in enumerate(self.adjacency) for v in nbrs if u < v]
            edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
            edges.setflags(write=False)
            object.__setattr__(self, "_edges", edges)

    @classmethod
    def from_edges(
        cls, node_count: int, edges: Iterable[tuple[int, int]], labels: Sequence[int] | None = None
    ) -> Graph:
        """Build a graph from an edge iterable; self-loops and duplicates are dropped."""
        nbrs: list[set[int]] = [set() for _ in range(node_count)]
        for u, v in edges:
            if not (0 <= u < node_count and 0 <= v < node_count):
                raise GraphError(f"edge ({u}, {v}) out of range for {node_count} nodes")
            if u == v:
                continue
            nbrs[u].add(v)
            nbrs[v].add(u)
        adjacency = tuple(tuple(sorted(s)) for s in nbrs)
        return cls(
            node_count,
            adjacency,
            np.ones(node_count, dtype=bool),
            tuple(labels) if labels is not None else None,
        )

    @property
    def edges(self) -> np.ndarray:
        """All edges (u < v) of the underlying graph, ignoring the alive mask."""
        return self._edges

    def alive_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.alive)

    @property
    def alive_count(self) -> int:
        return int(self.alive.sum())

    def neighbors(self, u: int) -> list[int]:
        alive = self.alive
        return [v for v in self.adjacency[u] if alive[v]]

    def degrees(self) -> np.ndarray:
        """Degree of every node inside the alive subgraph (0 for dead nodes)."""
        deg = np.zeros(self.node_count, dtype=np.int64)
        e = self._edges
        if len(e):
            keep = self.alive[e[:, 0]] & self.alive[e[:, 1]]
            np.add.at(deg, e[keep, 0], 1)
            np.add.at(deg, e[keep, 1], 1)
        return deg

    def alive_edges(self) -> np.ndarray:
        e = self._edges
        if not len(e):
            return e
        return e[self.alive[e[:, 0]] & self.alive[e[:, 1]]]

    def with_alive(self, alive: np.ndarray) -> Graph:
        return Graph(self.node_count, self.adjacency, np.array(alive, dtype=bool), self.labels, self._edges, self._arcs)

    def arcs(self) -> tuple[np.ndarray, np.ndarray]:
        """Directed arcs of A + I (both directions plus self-loops), sorted by (source, target)."""
        if not self._arcs:
            src = [u for u, nbrs in enumerate(self.adjacency) for v in sorted((*nbrs, u))]
            dst = [v for u, nbrs in enumerate(self.adjacency) for v in sorted((*nbrs, u))]
            self._arcs.extend((np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64)))
        return self._arcs[0], self._arcs[1]

    def original_label(self, u: int) -> int:
        return self.labels[u] if self.labels is not None else u


@dataclass(frozen=True)
class ComponentLabeling:
    label_of: dict[int, int]
    sizes: list[int]


@dataclass(frozen=True)
class CompressionSpec:
    rho: float
    removal_set: frozenset[int]

    @staticmethod
    def budget(rho: float, node_count: int) -> int:
        """Removal count ceil((1 - rho) * N)."""
        if not 0.0 < rho <= 1.0:
            raise GraphError(f"rho must lie in (0, 1], got {rho}")
        return int(math.ceil((1.0 - rho) * node_count - 1e-9))


def load_edge_list(source: TextIO) -> Graph:
    """Parse a whitespace-separated ``u v`` edge list.

    Lines starting with ``#`` are comments. A comment of the form
    ``# isolated: a b c`` additionally declares nodes without incident edges,
    which plain edge lists cannot express. Labels are compacted to ``0..N-1``
    in order of first appearance; the original labels are kept on the graph.
    """
    index: dict[int, int] = {}
    edges: list[tuple[int, int]] = []

    def ident(label: int) -> int:
        if label not in index:
            index[label] = len(index)
        return index[label]

    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("isolated:"):
                try:
                    for tok in body[len("isolated:"):].split():
                        ident(int(tok))
                except ValueError as exc:
                    raise GraphError(f"line {lineno}: bad isolated-node declaration") from exc
            continue
        parts = line.split("#", 1)[0].split()
        if len(parts) != 2:
            raise GraphError(f"line {lineno}: expected two integer tokens, got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise GraphError(f"line {lineno}: non-integer token in {line!r}") from exc
        edges.append((ident(u), ident(v)))
    if not index:
        raise GraphError("empty edge list")
    labels = sorted(index, key=index.__getitem__)
    return Graph.from_edges(len(labels), edges, labels)


def write_edge_list(g: Graph, sink: TextIO) -> None:
    """Write the alive subgraph using original labels; isolated alive nodes go in a comment.

    Output is canonical: each edge as ``low high`` label pair, sorted, so
    writing a parsed file reproduces it byte for byte.
    """
    deg = g.degrees()
    isolated = sorted(g.original_label(int(u)) for u in g.alive_nodes() if deg[u] == 0)
    if isolated:
        sink.write("# isolated: " + " ".join(map(str, isolated)) + "\n")
    pairs = sorted(
        (min(a, b), max(a, b))
        for a, b in ((g.original_label(int(u)), g.original_label(int(v))) for u, v in g.alive_edges())
    )
    sink.writelines(f"{a} {b}\n" for a, b in pairs)


def connected_components(g: Graph) -> ComponentLabeling:
    label_of: dict[int, int] = {}
    sizes: list[int] = []
    alive = g.alive
    adjacency = g.adjacency
    for s in np.flatnonzero(alive).tolist():
        if s in label_of:
            continue
        lab = len(sizes)
        label_of[s] = lab
        queue = deque([s])
        size = 0
        while queue:
            u = queue.popleft()
            size += 1
            for v in adjacency[u]:
                if alive[v] and v not in label_of:
                    label_of[v] = lab
                    queue.append(v)
        sizes.append(size)
    return ComponentLabeling(label_of, sizes)


def pairs_from_sizes(sizes: Iterable[int]) -> int:
    return sum(s * (s - 1) // 2 for s in sizes)


def pairwise_connectivity(g: Graph) -> int:
    """Number of unordered alive node pairs joined by a path."""
    return pairs_from_sizes(connected_components(g).sizes)


def remove_nodes(g: Graph, nodes: Iterable[int]) -> Graph:
    nodes = list(nodes)
    alive = g.alive.copy()
    for u in nodes:
        if not 0 <= u < g.node_count:
            raise GraphError(f"node {u} out of range")
        if not alive[u]:
            raise GraphError(f"node {u} is not alive")
        alive[u] = False
    return g.with_alive(alive)


def normalized_connectivity(g: Graph, baseline: int) -> float:
    if baseline <= 0:
        raise GraphError("baseline connectivity must be positive (degenerate graph)")
    return pairwise_connectivity(g) / baseline


def largest_component(g: Graph) -> list[int]:
    lab = connected_components(g)
    if not lab.sizes:
        return []
    best = int(np.argmax(lab.sizes))
    return sorted(u for u, c in lab.label_of.items() if c == best)


def connectivity_profile(g: Graph, removals: Sequence[int]) -> list[int]:
    """Pairwise connectivity before and after each removal (``len(removals) + 1`` values).

    Runs union-find backwards: start from the final residual graph and add
    the removed nodes back in reverse order, so the whole profile costs about
    one pass over the edges.
    """
    removals = list(removals)
    active = g.alive.copy()
    for u in removals:
        if not 0 <= u < g.node_count or not active[u]:
            raise GraphError(f"node {u} is not alive or repeated")
        active[u] = False
    parent = list(range(g.node_count))
    size = [1] * g.node_count

    def find(u: int) -> int:
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    def union(u: int, v: int) -> int:
        ru, rv = find(u), find(v)
        if ru == rv:
            return 0
        if size[ru] < size[rv]:
            ru, rv = rv, ru
        parent[rv] = ru
        gained = size[ru] * size[rv]
        size[ru] += size[rv]
        return gained

    conn = 0
    for u, v in g.edges.tolist():
        if active[u] and active[v]:
            conn += union(u, v)
    profile = [conn]
    for u in reversed(removals):
        active[u] = True
        for v in g.adjacency[u]:
            if active[v]:
                conn += union(u, v)
        profile.append(conn)
    profile.reverse()
    return profile


class ConnectivityTracker:
    """Maintains component labels and pairwise connectivity under node removals.

    Each removal re-labels only the removed node's former component, which is
    where every change happens.
    """

    def __init__(self, g: Graph) -> None:
        lab = connected_components(g)
        self.graph = g
        self.label_of = dict(lab.label_of)
        self.sizes = {i: s for i, s in enumerate(lab.sizes)}
        self.connectivity = pairs_from_sizes(lab.sizes)
        self._next_label = len(lab.sizes)

    def remove(self, node: int) -> int:
        g = remove_nodes(self.graph, [node])
        comp = self.label_of.pop(node)
        old_size = self.sizes.pop(comp)
        self.connectivity -= old_size * (old_size - 1) // 2
        alive = g.alive
        adjacency = g.adjacency
        seen: set[int] = set()
        for s in adjacency[node]:
            if not alive[s] or s in seen:
                continue
            lab = self._next_label
            self._next_label += 1
            seen.add(s)
            self.label_of[s] = lab
            queue = deque([s])
            size = 0
            while queue:
                u = queue.popleft()
                size += 1
                for v in adjacency[u]:
                    if alive[v] and v not in seen:
                        seen.add(v)
                        self.label_of[v] = lab
                        queue.append(v)
            self.sizes[lab] = size
            self.connectivity += size * (size - 1) // 2
        self.graph = g
        return self.connectivity
