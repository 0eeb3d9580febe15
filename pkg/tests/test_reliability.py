import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph
from fedtad.data_io import SbmSpec, generate_sbm
from fedtad.graph import build_graph
from fedtad.partition import ClientShard, Partition, induce_shards
from fedtad.reliability import (class_homophily, hybrid_embeddings, knowledge_reliability,
                                perturb_reliability, read_reliability, write_reliability)
from oracles import homophily_by_enumeration


def shard_of(g, train=None):
    n = g.num_nodes
    train = np.arange(n) if train is None else np.asarray(train)
    return ClientShard(0, g, np.arange(n), train, np.array([], dtype=np.int64), np.array([], dtype=np.int64))


def test_homophily_single_class(triangle):
    assert class_homophily(triangle, 0) == 1.0


def test_homophily_path():
    g = build_graph([(0, 1), (1, 2)], np.eye(3), [0, 0, 1], 2)
    assert class_homophily(g, 0) == 0.5
    assert class_homophily(g, 1) == 0.0


def test_homophily_undefined():
    g = build_graph([(0, 1)], np.eye(3), [0, 0, 1], 2)
    assert class_homophily(g, 1) is None


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 20), density=st.floats(0.05, 0.8))
def test_homophily_matches_enumeration(seed, n, density):
    g, edges = random_graph(np.random.default_rng(seed), n, density, num_classes=3, unlabeled=0.2)
    for c in range(3):
        assert class_homophily(g, c) == homophily_by_enumeration(edges.tolist(), g.labels, c)


def test_hybrid_embeddings_edgeless():
    X = np.arange(6.0).reshape(3, 2)
    g = build_graph([], X, [0, 0, 0], 1)
    np.testing.assert_array_equal(hybrid_embeddings(g, 3), np.hstack([X, np.zeros((3, 3))]))


def test_hybrid_embeddings_triangle():
    X = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    g = build_graph([(0, 1), (1, 2), (0, 2)], X, [0, 0, 0], 1)
    h = hybrid_embeddings(g, 2)
    assert h.shape == (3, 4)
    np.testing.assert_allclose(h, np.hstack([X, [[0.0, 0.5]] * 3]))


def test_reliability_clique_identical_features():
    n = 5
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    g = build_graph(edges, np.tile([1.0, 2.0, 0.5], (n, 1)), [0] * n, 2)
    phi = knowledge_reliability(shard_of(g), p=3)
    np.testing.assert_allclose(phi, [n * 1.0, 0.0], atol=1e-12)


def test_reliability_four_node_fixture():
    # path 0-1-2-3, degrees (1, 2, 2, 1); two-step return probabilities 1/2, 3/4, 3/4, 1/2
    X = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
    g = build_graph([(0, 1), (1, 2), (2, 3)], X, [0, 0, 1, 1], 2)
    h = [(1.0, 0.0, 0.0, 0.5), (1.0, 1.0, 0.0, 0.75), (0.0, 1.0, 0.0, 0.75), (0.0, 1.0, 0.0, 0.5)]

    def cos(a, b):
        dot = sum(x * y for x, y in zip(a, b))
        return dot / math.sqrt(sum(x * x for x in a)) / math.sqrt(sum(y * y for y in b))

    c01, c12, c23 = cos(h[0], h[1]), cos(h[1], h[2]), cos(h[2], h[3])
    expected = [c01 + (c01 + c12) / 2, (c12 + c23) / 2 + c23]
    assert abs(c01 - 1.375 / math.sqrt(1.25 * 2.5625)) < 1e-15
    np.testing.assert_allclose(knowledge_reliability(shard_of(g), p=2), expected, atol=1e-9, rtol=0)


def test_reliability_uses_training_nodes_only():
    X = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
    g = build_graph([(0, 1), (1, 2), (2, 3)], X, [0, 0, 1, 1], 2)
    full = knowledge_reliability(shard_of(g), p=2)
    only_class0 = knowledge_reliability(shard_of(g, train=[0, 1]), p=2)
    assert only_class0[1] == 0.0 and only_class0[0] == full[0]


def test_reliability_absent_class_and_isolated():
    g = build_graph([(0, 1)], np.ones((3, 2)), [0, 0, 0], 3)
    phi = knowledge_reliability(shard_of(g), p=2)
    assert phi[1] == 0 and phi[2] == 0
    assert phi[0] > 0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 15))
def test_reliability_nonnegative(seed, n):
    g, _ = random_graph(np.random.default_rng(seed), n, 0.4, num_classes=3)
    phi = knowledge_reliability(shard_of(g), p=3)
    assert phi.shape == (3,) and np.all(phi >= 0)


def test_reliability_grows_with_labeled_count():
    values = []
    for n in range(2, 8):
        edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
        g = build_graph(edges, np.ones((n, 2)), [0] * n, 1)
        values.append(knowledge_reliability(shard_of(g), p=3)[0])
    assert all(b > a for a, b in zip(values, values[1:]))
    np.testing.assert_allclose(values, np.arange(2, 8), atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_reliability_monotone_in_feature_similarity(seed):
    sizes = [15, 15]
    loose = generate_sbm(SbmSpec(sizes, 0.4, 0.1, 4, class_center_separation=1.0, noise_std=1.0, seed=seed))
    g = loose.graph
    centers = np.zeros((2, 4))
    centers[0, 0] = centers[1, 1] = 1.0
    # pull class-0 features towards their centre; labels and edges held fixed
    tight_features = g.features.copy()
    mask = g.labels == 0
    tight_features[mask] = centers[0] + 0.2 * (g.features[mask] - centers[0])
    tight = build_graph(g.edge_array(), tight_features, g.labels, 2)
    (s_loose,) = induce_shards(g, Partition(np.zeros(30, dtype=np.int64), 1), (1.0, 0.0, 0.0))
    (s_tight,) = induce_shards(tight, Partition(np.zeros(30, dtype=np.int64), 1), (1.0, 0.0, 0.0))
    assert knowledge_reliability(s_tight)[0] >= knowledge_reliability(s_loose)[0]


def test_perturbation_rules():
    phi = np.array([1.0, 0.0, 3.5])
    assert np.array_equal(perturb_reliability(phi, 0.0, seed=1), phi)
    a = perturb_reliability(phi, 0.1, seed=4)
    assert np.array_equal(a, perturb_reliability(phi, 0.1, seed=4))
    assert a[1] == 0.0
    for seed in range(50):
        assert np.all(perturb_reliability(phi, 5.0, seed=seed) >= 0)


def test_reliability_json(tmp_path):
    write_reliability(tmp_path / "reliability.json", 3, [0.5, 1.0])
    client, phi = read_reliability(tmp_path / "reliability.json")
    assert client == 3 and phi.tolist() == [0.5, 1.0]
