"""The GCN classifier, the conditional feature generator and their losses."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from fedtad.errors import ShapeError
from fedtad.tensor import (Tensor, add, as_tensor, concat_cols, cosine_similarity_matrix, dropout,
                           index_rows, log_softmax, matmul, mean, mul, relu, scale, spmm,
                           standardize_columns, take, total)


class ModelWeights:
    """Ordered (name, array) pairs exchanged between clients and the server."""

    def __init__(self, items):
        self.items = [(str(name), np.array(value, dtype=np.float64)) for name, value in items]

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.items]

    @property
    def arrays(self) -> list[np.ndarray]:
        return [value for _, value in self.items]

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, name: str) -> np.ndarray:
        for key, value in self.items:
            if key == name:
                return value
        raise KeyError(name)

    def copy(self) -> ModelWeights:
        return ModelWeights(self.items)

    def same_layout(self, other: ModelWeights) -> bool:
        return [(n, a.shape) for n, a in self.items] == [(n, a.shape) for n, a in other.items]

    def equals(self, other: ModelWeights) -> bool:
        return self.same_layout(other) and all(np.array_equal(a, b) for a, b in zip(self.arrays, other.arrays))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def to_dict(self) -> dict:
        return {"names": self.names,
                "shapes": [list(a.shape) for a in self.arrays],
                "values": [a.ravel().tolist() for a in self.arrays]}

    @classmethod
    def from_dict(cls, payload: dict) -> ModelWeights:
        items = []
        for name, shape, values in zip(payload["names"], payload["shapes"], payload["values"]):
            items.append((name, np.asarray(values, dtype=np.float64).reshape(shape)))
        return cls(items)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> ModelWeights:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class GcnModel:
    """Two-layer GCN without biases: A relu(A dropout(X) W1) W2."""

    W1: Tensor
    W2: Tensor
    dropout: float = 0.5

    @classmethod
    def init(cls, feature_dim: int, hidden: int, num_classes: int, dropout: float = 0.5,
             seed: int = 0) -> GcnModel:
        rng = np.random.default_rng(seed)
        return cls(Tensor(glorot(rng, feature_dim, hidden), True, "gcn.W1"),
                   Tensor(glorot(rng, hidden, num_classes), True, "gcn.W2"), dropout)

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.W1, self.W2]

    def weights(self) -> ModelWeights:
        return ModelWeights([("W1", self.W1.data), ("W2", self.W2.data)])

    def load_weights(self, weights: ModelWeights) -> None:
        if not weights.same_layout(self.weights()):
            raise ShapeError("GcnModel.load_weights", *(a.shape for a in weights.arrays))
        self.W1.data = weights["W1"].copy()
        self.W2.data = weights["W2"].copy()

    @classmethod
    def from_weights(cls, weights: ModelWeights, dropout: float = 0.5, trainable: bool = True) -> GcnModel:
        return cls(Tensor(weights["W1"].copy(), trainable, "gcn.W1"),
                   Tensor(weights["W2"].copy(), trainable, "gcn.W2"), dropout)

    def frozen(self) -> GcnModel:
        """Copy whose weights are constants for the tape."""
        return GcnModel(Tensor(self.W1.data), Tensor(self.W2.data), self.dropout)


def gcn_forward(m: GcnModel, norm_adj: sp.spmatrix, X, train_mode: bool = False,
                rng: np.random.Generator | int | None = None) -> Tensor:
    X = as_tensor(X)
    if X.data.ndim != 2 or X.shape[1] != m.W1.shape[0] or norm_adj.shape != (X.shape[0], X.shape[0]):
        raise ShapeError("gcn_forward", norm_adj.shape, X.shape, m.W1.shape)
    if train_mode and not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    h = dropout(X, m.dropout, rng, training=train_mode)
    h = relu(spmm(norm_adj, matmul(h, m.W1)))
    return spmm(norm_adj, matmul(h, m.W2))


def masked_cross_entropy(logits: Tensor, labels, mask) -> Tensor:
    """Mean negative log-likelihood over the nodes in ``mask``."""
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("masked_cross_entropy: mask is empty")
    picked = take(log_softmax(index_rows(logits, mask)), np.asarray(labels)[mask])
    return scale(mean(picked), -1.0)


def accuracy(logits, labels, mask) -> float:
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        return float("nan")
    return float(np.mean(data[mask].argmax(axis=1) == np.asarray(labels)[mask]))


@dataclass
class GeneratorModel:
    """MLP (noise ++ one-hot label) -> relu hidden -> linear feature vector.

    With ``normalize_output`` the batch of outputs is standardized per feature,
    which pins the pseudo-feature scale (the output bias then has no effect).
    """

    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor
    noise_dim: int
    num_classes: int
    normalize_output: bool = True

    @classmethod
    def init(cls, feature_dim: int, num_classes: int, noise_dim: int = 32, hidden: int = 256,
             seed: int = 0, normalize_output: bool = True) -> GeneratorModel:
        rng = np.random.default_rng(seed)
        return cls(Tensor(glorot(rng, noise_dim + num_classes, hidden), True, "gen.fc1.w"),
                   Tensor(np.zeros(hidden), True, "gen.fc1.b"),
                   Tensor(glorot(rng, hidden, feature_dim), True, "gen.fc2.w"),
                   Tensor(np.zeros(feature_dim), True, "gen.fc2.b"),
                   noise_dim, num_classes, normalize_output)

    @property
    def feature_dim(self) -> int:
        return self.fc2_w.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b]

    def weights(self) -> ModelWeights:
        return ModelWeights([(p.name, p.data) for p in self.parameters()])

    def forward(self, z: np.ndarray, labels: np.ndarray) -> Tensor:
        onehot = np.eye(self.num_classes)[labels]
        inp = concat_cols([as_tensor(z), as_tensor(onehot)])
        h = relu(add(matmul(inp, self.fc1_w), self.fc1_b))
        out = add(matmul(h, self.fc2_w), self.fc2_b)
        return standardize_columns(out) if self.normalize_output else out


def balanced_labels(B: int, C: int) -> np.ndarray:
    """floor(B/C) labels per class, remainder to the lowest class ids, class-sorted."""
    counts = np.full(C, B // C)
    counts[: B % C] += 1
    return np.repeat(np.arange(C), counts)


def sample_noise(gen: GeneratorModel, B: int, rng: np.random.Generator | int | None = None):
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if B < gen.num_classes:
        warnings.warn(f"B={B} pseudo-nodes cannot cover {gen.num_classes} classes", stacklevel=2)
    return rng.standard_normal((B, gen.noise_dim)), balanced_labels(B, gen.num_classes)


def generate_features(gen: GeneratorModel, B: int, seed: np.random.Generator | int | None = None):
    """Return (pseudo features as a Tensor of shape (B, F), pseudo labels)."""
    z, y = sample_noise(gen, B, seed)
    return gen.forward(z, y), y


def knn_adjacency(X, k: int) -> sp.csr_matrix:
    """Symmetric top-k inner-product graph, self excluded, ties to the lowest column."""
    X = X.data if isinstance(X, Tensor) else np.asarray(X, dtype=np.float64)
    B = X.shape[0]
    if not 1 <= k < B:
        raise ValueError(f"knn_adjacency needs 1 <= k < B, got k={k}, B={B}")
    sim = X @ X.T
    np.fill_diagonal(sim, -np.inf)
    # stable sort on the negated scores keeps the lowest index first among ties
    top = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(B), k)
    adj = sp.coo_matrix((np.ones(B * k), (rows, top.ravel())), shape=(B, B)).tocsr()
    adj = adj.maximum(adj.T).tocsr()
    adj.data[:] = 1.0
    adj.sort_indices()
    return adj


def diversity_loss(X: Tensor) -> Tensor:
    """Mean pairwise cosine similarity over all B^2 ordered pairs, diagonal included."""
    return mean(cosine_similarity_matrix(X))


def weighted_nll_sum(logits: Tensor, labels, weights) -> Tensor:
    """sum_i weights[i] * CE(softmax(logits_i), labels[i])."""
    picked = take(log_softmax(logits), labels)
    return scale(total(mul(picked, Tensor(np.asarray(weights, dtype=np.float64)))), -1.0)
