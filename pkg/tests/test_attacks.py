import itertools
import math

import networkx as nx
import numpy as np
import pytest

from cutter.attacks import (
    ALL_STRATEGIES,
    AttackPlan,
    AttackSchedule,
    AttackStrategy,
    attack,
    betweenness_scores,
    closeness_scores,
    collective_influence_scores,
    degree_scores,
    eigenvector_scores,
    execute_attack,
    percolation_scores,
    percolation_states,
    rank_by_scores,
    rank_nodes,
)
from cutter.generators import erdos_renyi
from cutter.graph import Graph, pairwise_connectivity, remove_nodes

from oracles import brute_betweenness, brute_ci, brute_closeness, brute_ranking, eigh_eigenvector, small_graphs

STAR4 = Graph.from_edges(5, [(0, i) for i in range(1, 5)])
P3 = Graph.from_edges(3, [(0, 1), (1, 2)])


class TestStrategyNames:
    def test_parse(self):
        assert AttackStrategy.parse("closeness") is AttackStrategy.CLOSENESS

    def test_unknown_lists_valid(self):
        with pytest.raises(ValueError, match="collective_influence"):
            AttackStrategy.parse("pagerank")

    def test_six_strategies(self):
        assert len(ALL_STRATEGIES) == 6


class TestScores:
    def test_degree_star(self):
        assert rank_nodes(STAR4, "degree").ranking[0] == 0

    def test_betweenness_p3(self):
        assert rank_nodes(P3, "betweenness").ranking[0] == 1
        assert betweenness_scores(P3).tolist() == [0.0, 1.0, 0.0]

    def test_ci_barbell_bridge_endpoints(self):
        # two 5-cliques joined by the edge 4-5
        edges = [e for e in itertools.combinations(range(5), 2)]
        edges += [(a + 5, b + 5) for a, b in edges] + [(4, 5)]
        g = Graph.from_edges(10, edges)
        scores = collective_influence_scores(g)
        np.testing.assert_array_equal(scores, brute_ci(g))
        assert set(rank_nodes(g, "collective_influence").ranking[:2]) == {4, 5}

    def test_eigenvector_k3_k2(self):
        g = Graph.from_edges(5, [(0, 1), (1, 2), (0, 2), (3, 4)])
        scores = eigenvector_scores(g)
        assert min(scores[:3]) > max(scores[3:])
        np.testing.assert_allclose(scores, eigh_eigenvector(g), atol=1e-12)

    def test_degree_matches_networkx(self, rng):
        g = erdos_renyi(30, 0.15, rng)
        nxg = nx.Graph(g.edges.tolist())
        nxg.add_nodes_from(range(30))
        assert degree_scores(g).tolist() == [nxg.degree[u] for u in range(30)]

    def test_percolation_matches_networkx(self, rng):
        for _ in range(5):
            g = erdos_renyi(15, 0.3, rng)
            nxg = nx.Graph(g.edges.tolist())
            nxg.add_nodes_from(range(15))
            states = percolation_states(g)
            ref = nx.percolation_centrality(nxg, states={u: states[u] for u in range(15)})
            np.testing.assert_allclose(percolation_scores(g), [ref[u] for u in range(15)], atol=1e-12)

    def test_percolation_states(self):
        assert percolation_states(STAR4).tolist() == [1.0, 0.25, 0.25, 0.25, 0.25]

    def test_dead_nodes_never_ranked(self):
        g = remove_nodes(STAR4, [0, 2])
        for s in ALL_STRATEGIES:
            assert sorted(rank_nodes(g, s).ranking) == [1, 3, 4]

    def test_ties_break_by_id(self):
        ring = Graph.from_edges(6, [(i, (i + 1) % 6) for i in range(6)])
        for s in ALL_STRATEGIES:
            assert rank_nodes(ring, s).ranking == tuple(range(6))

    def test_rank_by_scores_order(self):
        assert rank_by_scores(P3, np.array([0.5, 0.1, 0.5])) == (0, 2, 1)


class TestAgainstBruteForce:
    """Rankings against independent references on every small graph."""

    def test_degree_betweenness_closeness_rankings(self):
        for g in small_graphs(150):
            alive = g.alive_nodes().tolist()
            bt = brute_betweenness(g) / 2.0
            cl = brute_closeness(g)
            np.testing.assert_allclose(betweenness_scores(g), bt, atol=1e-12)
            np.testing.assert_allclose(closeness_scores(g), cl, atol=1e-12)
            assert rank_nodes(g, "degree").ranking == brute_ranking(g.degrees().astype(float), alive)
            assert rank_nodes(g, "betweenness").ranking == brute_ranking(bt, alive)
            assert rank_nodes(g, "closeness").ranking == brute_ranking(cl, alive)

    def test_eigenvector_scores(self):
        for g in small_graphs(150, seed=1):
            np.testing.assert_allclose(eigenvector_scores(g), eigh_eigenvector(g), atol=1e-6)

    def test_ci_and_percolation(self):
        for g in small_graphs(100, seed=2):
            np.testing.assert_allclose(collective_influence_scores(g), brute_ci(g))
            x = percolation_states(g)
            n = g.alive_count
            raw = brute_betweenness(g, x)
            expected = np.zeros(g.node_count)
            for v in g.alive_nodes():
                denom = x[g.alive].sum() - x[v]
                if denom > 0 and n > 2:
                    expected[v] = raw[v] / denom / (n - 2)
            np.testing.assert_allclose(percolation_scores(g), expected, atol=1e-12)


class TestSchedule:
    def test_default(self):
        sched = AttackSchedule()
        assert sched.steps == 40
        assert sched.batch_size(200) == 2
        assert sched.batch_size(50) == 1

    @pytest.mark.parametrize("step,top", [(0.0, 0.4), (0.5, 0.4), (0.1, 1.5)])
    def test_invalid(self, step, top):
        with pytest.raises(ValueError):
            AttackSchedule(step, top)


class TestExecute:
    def test_first_entry_and_length(self, rng):
        g = erdos_renyi(40, 0.1, rng)
        for s in ALL_STRATEGIES:
            curve = attack(g, s)
            assert len(curve) == 41
            assert curve.values[0] == 1.0
            assert all(a >= b for a, b in zip(curve.values, curve.values[1:]))

    def test_star_center_first(self):
        star = Graph.from_edges(10, [(0, i) for i in range(1, 10)])
        curve = attack(star, "degree", AttackSchedule(0.1, 0.4))
        assert curve.values == (1.0, 0.0, 0.0, 0.0, 0.0)

    def test_matches_full_recompute(self):
        g = erdos_renyi(50, 0.1, np.random.default_rng(11))
        plan = rank_nodes(g, AttackStrategy.CLOSENESS)
        curve = execute_attack(g, plan)
        base = pairwise_connectivity(g)
        for t, value in enumerate(curve.values):
            h = remove_nodes(g, plan.ranking[:t])
            assert value == pairwise_connectivity(h) / base

    def test_degenerate_graph(self):
        g = Graph.from_edges(4, [])
        curve = attack(g, "degree", AttackSchedule(0.25, 0.5))
        assert curve.values == (1.0, 0.0, 0.0)

    def test_ranking_shorter_than_schedule(self):
        plan = AttackPlan((1, 0, 2), AttackStrategy.DEGREE)
        curve = execute_attack(P3, plan, AttackSchedule(0.5, 1.0))
        assert curve.values == (1.0, 0.0, 0.0)

    def test_compressed_graph_uses_own_size(self, rng):
        g = erdos_renyi(60, 0.1, rng)
        h = remove_nodes(g, range(30))
        sched = AttackSchedule(0.1, 0.4)
        plan = rank_nodes(h, "degree")
        curve = execute_attack(h, plan, sched)
        base = pairwise_connectivity(h)
        for t, value in enumerate(curve.values):
            assert value == pairwise_connectivity(remove_nodes(h, plan.ranking[: 3 * t])) / base
        assert math.isclose(curve.values[0], 1.0)
