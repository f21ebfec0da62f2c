"""Synthetic graph generators for desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .graph import Graph, GraphError


def erdos_renyi(n: int, p: float, rng: np.random.Generator) -> Graph:
    if n < 1 or not 0.0 <= p <= 1.0:
        raise GraphError(f"invalid ER parameters n={n}, p={p}")
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return Graph.from_edges(n, zip(iu[keep].tolist(), ju[keep].tolist()))


def barabasi_albert(n: int, m: int, rng: np.random.Generator) -> Graph:
    """Preferential attachment grown from a star on ``m + 1`` nodes."""
    if m < 1 or n <= m:
        raise GraphError(f"invalid BA parameters n={n}, m={m}")
    edges = [(0, v) for v in range(1, m + 1)]
    repeated = [0] * m + list(range(1, m + 1))
    for new in range(m + 1, n):
        targets: set[int] = set()
        while len(targets) < m:
            targets.add(repeated[int(rng.integers(len(repeated)))])
        for t in sorted(targets):
            edges.append((new, t))
            repeated.extend((new, t))
    return Graph.from_edges(n, edges)


def parse_spec(spec: str, rng: np.random.Generator) -> Graph:
    """Build a graph from ``er:N,p`` or ``ba:N,m``."""
    kind, _, args = spec.partition(":")
    parts = args.split(",")
    try:
        if kind == "er" and len(parts) == 2:
            return erdos_renyi(int(parts[0]), float(parts[1]), rng)
        if kind == "ba" and len(parts) == 2:
            return barabasi_albert(int(parts[0]), int(parts[1]), rng)
    except ValueError as exc:
        raise GraphError(f"bad generator spec {spec!r}") from exc
    raise GraphError(f"bad generator spec {spec!r}; expected er:N,p or ba:N,m")
