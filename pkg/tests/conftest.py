import itertools

import numpy as np
import pytest

from cutter.graph import Graph


def random_graph(rng: np.random.Generator, n: int, p: float) -> Graph:
    edges = [(u, v) for u, v in itertools.combinations(range(n), 2) if rng.random() < p]
    return Graph.from_edges(n, edges)


def brute_force_connectivity(g: Graph) -> int:
    """Count alive pairs joined by a path using Floyd-Warshall style closure."""
    n = g.node_count
    reach = np.zeros((n, n), dtype=bool)
    for u, v in g.edges:
        if g.alive[u] and g.alive[v]:
            reach[u, v] = reach[v, u] = True
    for k in range(n):
        reach |= np.outer(reach[:, k], reach[k, :])
    alive = np.flatnonzero(g.alive)
    return sum(1 for i, j in itertools.combinations(alive, 2) if reach[i, j])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance criteria summary ----------------------------------------------

_criteria: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        _criteria[marker.args[0]] = (marker.args[1], "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, verdict, detail = _criteria[number]
        line = f"criterion {number:2d}: {verdict}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
