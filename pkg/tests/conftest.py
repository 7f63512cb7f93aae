import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cbgraph import graph as G  # noqa: E402

ACCEPTANCE_LINES = []


def random_corpus(n, k_min, k_max, seed, kinds=("er", "undirected", "dag", "tc", "tournament")):
    """Mixed-family random graphs; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        K = int(rng.integers(k_min, k_max + 1))
        p = float(rng.uniform(0.15, 0.6))
        kind = kinds[i % len(kinds)]
        if kind == "er":
            g = G.erdos_renyi(K, p, rng)
        elif kind == "undirected":
            g = G.random_undirected(K, p, rng)
        elif kind == "dag":
            g = G.random_dag(K, p, rng)
        elif kind == "tc":
            g = G.random_transitive_closure(K, p, rng)
        else:
            g = G.random_tournament(K, rng)
        out.append((kind, g))
    return out


@pytest.fixture(scope="session")
def corpus():
    """200 random graphs with 3 <= K <= 10 (criteria 1, 2 and 9)."""
    return random_corpus(200, 3, 10, seed=20240601)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
