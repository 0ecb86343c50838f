import numpy as np
import pytest

from topoprompt.graphs import Graph, generate_sbm


def graph_from_pairs(num_nodes, pairs):
    return Graph.from_edges(num_nodes, np.asarray(pairs, dtype=np.int64).reshape(-1, 2))


def clique(n):
    return graph_from_pairs(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def star(n_leaves):
    return graph_from_pairs(n_leaves + 1, [(0, i) for i in range(1, n_leaves + 1)])


def path(n):
    return graph_from_pairs(n, [(i, i + 1) for i in range(n - 1)])


def cycle(n):
    return graph_from_pairs(n, [(i, (i + 1) % n) for i in range(n)])


def two_components():
    # K4 plus a 3-path, disconnected
    edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    edges += [(4, 5), (5, 6)]
    return graph_from_pairs(7, edges)


def random_corpus(count=50, max_nodes=200, base_seed=7000):
    """Mixed single-block and two-block random graphs, deterministic."""
    graphs = []
    rng = np.random.default_rng(base_seed)
    for i in range(count):
        n = int(rng.integers(5, max_nodes + 1))
        if i % 2 == 0:
            p = float(rng.uniform(0.02, 0.3))
            g = generate_sbm([n], p, 0.0, seed=base_seed + i)
        else:
            a = n // 2
            g = generate_sbm(
                [a, n - a],
                float(rng.uniform(0.1, 0.4)),
                float(rng.uniform(0.0, 0.05)),
                seed=base_seed + i,
            )
        graphs.append(g)
    return graphs


@pytest.fixture(scope="session")
def corpus():
    return random_corpus()


@pytest.fixture(scope="session")
def fixture_graphs():
    return {
        "clique6": clique(6),
        "star8": star(8),
        "path10": path(10),
        "cycle6": cycle(6),
        "two_components": two_components(),
        "empty5": graph_from_pairs(5, []),
        "single": graph_from_pairs(1, []),
    }


@pytest.fixture(scope="session")
def small_corpus(corpus):
    """Corpus members small enough for cubic-time oracles."""
    return [g for g in corpus if g.num_nodes <= 60]


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
