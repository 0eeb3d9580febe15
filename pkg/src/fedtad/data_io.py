"""On-disk dataset format and a stochastic block model generator.

A dataset directory holds four files::

    meta.json      {"num_nodes", "num_classes", "feature_dim", "name"}
    edges.csv      one "u,v" pair per line, 0-indexed, each edge once with u < v
    features.csv   one row of feature_dim comma-separated reals per node
    labels.csv     one integer per line, -1 for unlabeled nodes

An optional ``split.json`` ({"train": [...], "val": [...], "test": [...]})
carries a global split.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from fedtad.errors import CountMismatchError, DatasetError, MalformedRowError, MissingFileError
from fedtad.graph import UNLABELED, Graph, build_graph

REQUIRED_FILES = ("meta.json", "edges.csv", "features.csv", "labels.csv")
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    graph: Graph
    name: str
    split: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.split is None:
            return
        seen = np.zeros(self.graph.num_nodes, dtype=bool)
        for key in SPLIT_NAMES:
            idx = np.asarray(self.split.get(key, []), dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= self.graph.num_nodes):
                raise DatasetError(f"split '{key}' has indices outside [0, {self.graph.num_nodes})")
            if seen[idx].any():
                raise DatasetError(f"split '{key}' overlaps another split")
            seen[idx] = True


@dataclass(frozen=True)
class SbmSpec:
    nodes_per_class: Sequence[int]
    intra_prob: float
    inter_prob: float
    feature_dim: int
    class_center_separation: float = 1.0
    noise_std: float = 1.0
    seed: int = 0
    num_classes: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "num_classes", len(self.nodes_per_class))
        for name in ("intra_prob", "inter_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.class_center_separation < 0:
            raise ValueError("class_center_separation must be >= 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.num_classes < 1 or any(n < 1 for n in self.nodes_per_class):
            raise ValueError("every class needs at least one node")
        if self.feature_dim < self.num_classes:
            raise ValueError("feature_dim must be >= number of classes (one center axis per class)")


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise MissingFileError("file not found", str(path))
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def load_dataset(dir_path) -> DatasetBundle:
    root = Path(dir_path)
    if not root.is_dir():
        raise MissingFileError("dataset directory not found", str(root))
    for name in REQUIRED_FILES:
        if not (root / name).is_file():
            raise MissingFileError("file not found", str(root / name))

    meta_path = root / "meta.json"
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        n = int(meta["num_nodes"])
        num_classes = int(meta["num_classes"])
        dim = int(meta["feature_dim"])
        name = str(meta.get("name", root.name))
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedRowError(f"bad metadata: {exc!r}", str(meta_path)) from None

    feat_path = root / "features.csv"
    rows = _read_lines(feat_path)
    if len(rows) != n:
        raise CountMismatchError(f"expected {n} feature rows, found {len(rows)}", str(feat_path))
    features = np.empty((n, dim))
    for i, line in enumerate(rows):
        parts = line.split(",")
        if len(parts) != dim:
            raise MalformedRowError(f"expected {dim} values, found {len(parts)}", str(feat_path), i + 1)
        try:
            features[i] = [float(x) for x in parts]
        except ValueError:
            raise MalformedRowError(f"non-numeric value in {line!r}", str(feat_path), i + 1) from None

    label_path = root / "labels.csv"
    rows = _read_lines(label_path)
    if len(rows) != n:
        raise CountMismatchError(f"expected {n} labels, found {len(rows)}", str(label_path))
    labels = np.empty(n, dtype=np.int64)
    for i, line in enumerate(rows):
        try:
            value = int(line.strip())
        except ValueError:
            raise MalformedRowError(f"label {line!r} is not an integer", str(label_path), i + 1) from None
        if value != UNLABELED and not 0 <= value < num_classes:
            raise MalformedRowError(f"label {value} outside [0, {num_classes}) and not -1",
                                    str(label_path), i + 1)
        labels[i] = value

    edge_path = root / "edges.csv"
    rows = _read_lines(edge_path)
    edges = np.empty((len(rows), 2), dtype=np.int64)
    for i, line in enumerate(rows):
        parts = line.split(",")
        if len(parts) != 2:
            raise MalformedRowError(f"expected 'u,v', found {line!r}", str(edge_path), i + 1)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise MalformedRowError(f"non-integer endpoint in {line!r}", str(edge_path), i + 1) from None
        if not (0 <= u < n and 0 <= v < n):
            raise MalformedRowError(f"endpoint outside [0, {n}) in {line!r}", str(edge_path), i + 1)
        edges[i] = (u, v)

    split = None
    split_path = root / "split.json"
    if split_path.is_file():
        raw = json.loads(split_path.read_text(encoding="utf-8"))
        split = {key: np.asarray(raw.get(key, []), dtype=np.int64) for key in SPLIT_NAMES}

    graph = build_graph(edges, features, labels, num_classes)
    return DatasetBundle(graph=graph, name=name, split=split)


def save_dataset(bundle: DatasetBundle, dir_path) -> Path:
    """Write ``bundle`` in canonical form (edges sorted, u < v, floats as repr)."""
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    g = bundle.graph
    meta = {"num_nodes": g.num_nodes, "num_classes": g.num_classes,
            "feature_dim": g.feature_dim, "name": bundle.name}
    (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    (root / "edges.csv").write_text("".join(f"{u},{v}\n" for u, v in g.edge_array()), encoding="utf-8")
    (root / "features.csv").write_text(
        "".join(",".join(repr(float(x)) for x in row) + "\n" for row in g.features), encoding="utf-8")
    (root / "labels.csv").write_text("".join(f"{int(y)}\n" for y in g.labels), encoding="utf-8")
    if bundle.split is not None:
        payload = {key: [int(i) for i in bundle.split[key]] for key in SPLIT_NAMES}
        (root / "split.json").write_text(json.dumps(payload) + "\n", encoding="utf-8")
    return root


def generate_sbm(spec: SbmSpec) -> DatasetBundle:
    """Sample a stochastic block model with Gaussian class-centred features.

    Deterministic for a fixed ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    sizes = list(spec.nodes_per_class)
    labels = np.repeat(np.arange(spec.num_classes), sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    edge_blocks = []
    for a in range(spec.num_classes):
        for b in range(a, spec.num_classes):
            prob = spec.intra_prob if a == b else spec.inter_prob
            hits = rng.random((sizes[a], sizes[b])) < prob
            if a == b:
                hits = np.triu(hits, k=1)
            rows, cols = np.nonzero(hits)
            edge_blocks.append(np.stack([rows + offsets[a], cols + offsets[b]], axis=1))
    edges = np.concatenate(edge_blocks) if edge_blocks else np.empty((0, 2), dtype=np.int64)

    centers = np.zeros((spec.num_classes, spec.feature_dim))
    centers[np.arange(spec.num_classes), np.arange(spec.num_classes)] = spec.class_center_separation
    features = centers[labels] + spec.noise_std * rng.standard_normal((len(labels), spec.feature_dim))

    graph = build_graph(edges, features, labels, spec.num_classes)
    return DatasetBundle(graph=graph, name=f"sbm-{spec.seed}")
