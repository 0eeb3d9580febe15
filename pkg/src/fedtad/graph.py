"""Attributed undirected graphs and the sparse operators derived from them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from fedtad.errors import GraphError

UNLABELED = -1


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable attributed graph.

    ``adj`` is a binary, symmetric CSR matrix with sorted indices and no
    stored self-loops. ``labels`` uses :data:`UNLABELED` for nodes without
    a class.
    """

    num_classes: int
    features: np.ndarray
    labels: np.ndarray
    adj: sp.csr_matrix

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.adj.indptr)

    @property
    def num_edges(self) -> int:
        return self.adj.nnz // 2

    def edge_array(self) -> np.ndarray:
        """Undirected edges as an (E, 2) array with u < v, lexicographically sorted."""
        coo = sp.triu(self.adj, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return np.stack([coo.row[order], coo.col[order]], axis=1).astype(np.int64)

    def neighbors(self, u: int) -> np.ndarray:
        return self.adj.indices[self.adj.indptr[u]:self.adj.indptr[u + 1]]

    def with_adjacency(self, adj: sp.spmatrix) -> Graph:
        return Graph(self.num_classes, self.features, self.labels, _canonical_adjacency(adj))

    def subgraph(self, nodes: np.ndarray) -> Graph:
        nodes = np.asarray(nodes, dtype=np.int64)
        sub = self.adj[nodes][:, nodes]
        return Graph(self.num_classes, self.features[nodes].copy(), self.labels[nodes].copy(),
                     _canonical_adjacency(sub))


def _canonical_adjacency(adj: sp.spmatrix) -> sp.csr_matrix:
    adj = sp.csr_matrix(adj, dtype=np.float64)
    adj = adj.maximum(adj.T).tocsr()
    adj.setdiag(0)
    adj.eliminate_zeros()
    adj.data[:] = 1.0
    adj.sort_indices()
    return adj


def build_graph(edge_list, features, labels, num_classes: int) -> Graph:
    """Build a deduplicated, symmetric, self-loop-free :class:`Graph`."""
    try:
        feats = np.array(features, dtype=np.float64)
    except ValueError as exc:
        raise GraphError(f"features are not rectangular: {exc}") from None
    if feats.ndim != 2:
        raise GraphError(f"features must be a 2-D matrix, got {feats.ndim} dimension(s)")
    n = feats.shape[0]

    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    if lab.shape[0] != n:
        raise GraphError(f"got {lab.shape[0]} labels for {n} nodes")
    if num_classes < 1:
        raise GraphError("num_classes must be >= 1")
    bad = (lab != UNLABELED) & ((lab < 0) | (lab >= num_classes))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise GraphError(f"label {lab[i]} of node {i} outside [0, {num_classes})")

    edges = np.asarray(edge_list, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        i = int(np.flatnonzero((edges < 0).any(axis=1) | (edges >= n).any(axis=1))[0])
        raise GraphError(f"edge {tuple(edges[i])} has an endpoint outside [0, {n})")
    adj = sp.coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    return Graph(num_classes, feats, lab, _canonical_adjacency(adj))


def normalize_adjacency(adj: sp.spmatrix) -> sp.csr_matrix:
    """Symmetric normalization D^-1/2 (A + I) D^-1/2 of a binary adjacency."""
    n = adj.shape[0]
    a_hat = (sp.csr_matrix(adj) + sp.identity(n, format="csr")).tocsr()
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    out = (inv_sqrt @ a_hat @ inv_sqrt).tocsr()
    out.sort_indices()
    return out


def gcn_normalize(g: Graph) -> sp.csr_matrix:
    return normalize_adjacency(g.adj)


def transition_matrix(g: Graph) -> sp.csr_matrix:
    """Column-stochastic random-walk matrix A D^-1 over the raw adjacency.

    Isolated nodes get an all-zero column.
    """
    deg = g.degrees.astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    t = (g.adj @ sp.diags(inv)).tocsr()
    t.sort_indices()
    return t


def diffusion_diagonals(t: sp.spmatrix, p: int) -> np.ndarray:
    """Return an (N, p) matrix whose column j-1 is diag(T^j)."""
    if p < 1:
        raise GraphError(f"walk length p must be >= 1, got {p}")
    t = sp.csr_matrix(t)
    out = np.zeros((t.shape[0], p))
    power = t.copy()
    for j in range(p):
        out[:, j] = power.diagonal()
        if j + 1 < p:
            power = (t @ power).tocsr()
    return out
