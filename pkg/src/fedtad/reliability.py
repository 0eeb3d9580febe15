"""Client-side statistics: class-wise homophily and class-wise knowledge reliability."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from fedtad.graph import Graph, diffusion_diagonals, transition_matrix

DEFAULT_WALK_LENGTH = 5


def class_homophily(g: Graph, c: int) -> float | None:
    """Share of edges touching class ``c`` whose endpoints are both class ``c``.

    Returns None when no edge touches class ``c``.
    """
    edges = g.edge_array()
    if len(edges) == 0:
        return None
    yu, yv = g.labels[edges[:, 0]], g.labels[edges[:, 1]]
    touching = int(np.sum((yu == c) | (yv == c)))
    if touching == 0:
        return None
    return int(np.sum((yu == c) & (yv == c))) / touching


def class_homophily_all(g: Graph) -> list[float | None]:
    return [class_homophily(g, c) for c in range(g.num_classes)]


def hybrid_embeddings(g: Graph, p: int = DEFAULT_WALK_LENGTH) -> np.ndarray:
    """Node features concatenated with random-walk return probabilities of length 1..p."""
    return np.hstack([g.features, diffusion_diagonals(transition_matrix(g), p)])


def neighbor_cosine_means(g: Graph, emb: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Per node, the mean cosine similarity of its embedding to its neighbours' (0 if isolated)."""
    norms = np.linalg.norm(emb, axis=1)
    unit = emb / np.where(norms > 0, norms, 1.0)[:, None]
    coo = g.adj.tocoo()
    cos = np.einsum("ij,ij->i", unit[coo.row], unit[coo.col])
    sums = np.bincount(coo.row, weights=cos, minlength=g.num_nodes)
    deg = g.degrees
    return np.divide(sums, deg, out=np.zeros(g.num_nodes), where=deg > 0)


def knowledge_reliability(shard, p: int = DEFAULT_WALK_LENGTH) -> np.ndarray:
    """Per-class reliability: sum over training nodes of class c of their clamped
    mean neighbour cosine similarity in the hybrid embedding space."""
    g = shard.graph
    means = np.maximum(neighbor_cosine_means(g, hybrid_embeddings(g, p)), 0.0)
    train = np.asarray(shard.train, dtype=np.int64)
    return np.bincount(g.labels[train], weights=means[train], minlength=g.num_classes).astype(np.float64)


def perturb_reliability(phi, noise_level: float, seed=None) -> np.ndarray:
    """Relative Gaussian noise: phi_c * (1 + noise_level * eps_c), clamped at 0."""
    if noise_level < 0:
        raise ValueError("noise_level must be >= 0")
    phi = np.asarray(phi, dtype=np.float64)
    if noise_level == 0:
        return phi.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return np.maximum(0.0, phi * (1.0 + noise_level * rng.standard_normal(phi.shape)))


def write_reliability(path, client: int, phi) -> None:
    payload = {"client": int(client), "phi": [float(x) for x in phi]}
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def read_reliability(path) -> tuple[int, np.ndarray]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return int(payload["client"]), np.asarray(payload["phi"], dtype=np.float64)
