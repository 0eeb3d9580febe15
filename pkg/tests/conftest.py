import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fedtad.graph import build_graph  # noqa: E402


@pytest.fixture
def triangle():
    return build_graph([(0, 1), (1, 2), (0, 2)], np.eye(3), [0, 0, 0], 1)


@pytest.fixture
def single_edge():
    return build_graph([(0, 1)], np.ones((2, 1)), [0, 1], 2)


@pytest.fixture
def two_cliques():
    """Two 4-cliques joined by the bridge 3-4."""
    edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    edges += [(i + 4, j + 4) for i, j in edges]
    edges.append((3, 4))
    return build_graph(edges, np.eye(8), [0] * 4 + [1] * 4, 2)


def random_graph(rng, n, p, num_classes=3, feature_dim=4, unlabeled=0.0):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    edges = np.argwhere(upper)
    labels = rng.integers(0, num_classes, size=n)
    labels[rng.random(n) < unlabeled] = -1
    return build_graph(edges, rng.standard_normal((n, feature_dim)), labels, num_classes), edges


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
