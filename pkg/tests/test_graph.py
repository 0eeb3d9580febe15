import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_graph
from fedtad.errors import GraphError
from fedtad.graph import UNLABELED, build_graph, diffusion_diagonals, gcn_normalize, transition_matrix
from oracles import dense_adjacency, dense_return_probabilities


def test_build_graph_dedups_and_drops_self_loops():
    g = build_graph([(0, 1), (1, 0), (1, 1)], np.zeros((2, 1)), [0, 0], 1)
    assert g.num_edges == 1
    assert g.edge_array().tolist() == [[0, 1]]
    assert g.adj.diagonal().sum() == 0


def test_triangle_degrees(triangle):
    assert triangle.degrees.tolist() == [2, 2, 2]


def test_out_of_range_endpoint():
    with pytest.raises(GraphError, match="outside"):
        build_graph([(0, 5)], np.zeros((3, 1)), [0, 0, 0], 1)


def test_ragged_features():
    with pytest.raises(GraphError, match="rectangular"):
        build_graph([], [[1.0, 2.0], [3.0]], [0, 0], 1)


def test_bad_label():
    with pytest.raises(GraphError, match="label"):
        build_graph([], np.zeros((2, 1)), [0, 3], 2)
    g = build_graph([], np.zeros((2, 1)), [UNLABELED, 1], 2)
    assert g.labels.tolist() == [-1, 1]


def test_gcn_normalize_identity_case():
    g = build_graph([], np.zeros((1, 1)), [0], 1)
    assert gcn_normalize(g).toarray().tolist() == [[1.0]]


def test_gcn_normalize_single_edge(single_edge):
    np.testing.assert_allclose(gcn_normalize(single_edge).toarray(), [[0.5, 0.5], [0.5, 0.5]])


def test_gcn_normalize_triangle(triangle):
    np.testing.assert_allclose(gcn_normalize(triangle).toarray(), np.full((3, 3), 1 / 3))


def test_transition_matrix_cases(single_edge, triangle):
    np.testing.assert_array_equal(transition_matrix(single_edge).toarray(), [[0, 1], [1, 0]])
    t = transition_matrix(triangle).toarray()
    np.testing.assert_allclose(t, (np.ones((3, 3)) - np.eye(3)) / 2)
    iso = build_graph([(0, 1)], np.zeros((3, 1)), [0, 0, 0], 1)
    assert np.all(transition_matrix(iso).toarray()[:, 2] == 0)


def test_diffusion_fixtures(single_edge, triangle):
    np.testing.assert_allclose(diffusion_diagonals(transition_matrix(triangle), 2), [[0, 0.5]] * 3)
    np.testing.assert_allclose(diffusion_diagonals(transition_matrix(single_edge), 3), [[0, 1, 0]] * 2)
    iso = build_graph([(0, 1)], np.zeros((3, 1)), [0, 0, 0], 1)
    assert np.all(diffusion_diagonals(transition_matrix(iso), 4)[2] == 0)


def test_diffusion_rejects_zero_length(triangle):
    with pytest.raises(GraphError):
        diffusion_diagonals(transition_matrix(triangle), 0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 12), p=st.integers(1, 6),
       density=st.floats(0.0, 1.0))
def test_diffusion_matches_dense_power_oracle(seed, n, p, density):
    g, edges = random_graph(np.random.default_rng(seed), n, density)
    expected = dense_return_probabilities(dense_adjacency(n, edges), p)
    np.testing.assert_allclose(diffusion_diagonals(transition_matrix(g), p), expected, atol=1e-9, rtol=0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 12), density=st.floats(0.0, 1.0))
def test_gcn_normalize_symmetric_and_bounded(seed, n, density):
    g, _ = random_graph(np.random.default_rng(seed), n, density)
    a = gcn_normalize(g).toarray()
    assert np.array_equal(a, a.T)
    assert a.min() >= 0 and a.max() <= 1
    pattern = (g.adj.toarray() + np.eye(n)) > 0
    assert np.array_equal(a > 0, pattern)
    # power iteration from a positive start vector
    v = np.ones(n)
    for _ in range(200):
        w = a @ v
        v = w / np.linalg.norm(w)
    assert v @ a @ v <= 1 + 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 12))
def test_transition_columns_stochastic(seed, n):
    g, _ = random_graph(np.random.default_rng(seed), n, 0.3)
    cols = transition_matrix(g).toarray().sum(axis=0)
    for d, s in zip(g.degrees, cols):
        assert abs(s - (1.0 if d else 0.0)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 12))
def test_build_graph_idempotent(seed, n):
    g, _ = random_graph(np.random.default_rng(seed), n, 0.4)
    again = build_graph(g.edge_array(), g.features, g.labels, g.num_classes)
    assert (again.adj != g.adj).nnz == 0
    assert np.array_equal(again.edge_array(), g.edge_array())
    assert np.array_equal(again.features, g.features)
