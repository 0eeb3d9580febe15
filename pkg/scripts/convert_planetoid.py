"""Convert the raw Planetoid pickles (ind.<name>.x, .tx, .allx, .y, .ty, .ally, .graph, .test.index)
into the CSV dataset layout that ``fedtad`` loads.

    python scripts/convert_planetoid.py --raw planetoid/data --name cora --out data/cora

The pickles come from the public Planetoid release; nothing is downloaded here.
"""

import argparse
import pickle
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from fedtad.data_io import DatasetBundle, save_dataset
from fedtad.graph import build_graph


def _load(raw: Path, name: str, part: str):
    with open(raw / f"ind.{name}.{part}", "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def convert(raw: Path, name: str, row_normalize: bool = False) -> DatasetBundle:
    x, y, tx, ty, allx, ally, graph = (_load(raw, name, p) for p in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    test_idx = np.loadtxt(raw / f"ind.{name}.test.index", dtype=np.int64)
    order = np.sort(test_idx)
    if name == "citeseer":
        # citeseer has isolated test ids missing from tx; pad them with zero rows
        full = np.arange(order.min(), order.max() + 1)
        tx_ext = sp.lil_matrix((len(full), tx.shape[1]))
        tx_ext[order - order.min(), :] = tx
        ty_ext = np.zeros((len(full), y.shape[1]))
        ty_ext[order - order.min(), :] = ty
        tx, ty = tx_ext, ty_ext
    features = sp.vstack([allx, tx]).tolil()
    features[test_idx, :] = features[order, :]
    onehot = np.vstack([ally, ty])
    onehot[test_idx, :] = onehot[order, :]
    labels = np.where(onehot.sum(axis=1) > 0, onehot.argmax(axis=1), -1)
    X = np.asarray(features.todense(), dtype=np.float64)
    if row_normalize:
        sums = X.sum(axis=1, keepdims=True)
        X = np.divide(X, sums, out=np.zeros_like(X), where=sums > 0)
    edges = [(u, v) for u, nbrs in graph.items() for v in nbrs if u != v]
    g = build_graph(edges, X, labels, onehot.shape[1])
    val = np.setdiff1d(np.arange(len(y), min(len(y) + 500, g.num_nodes)), order)
    split = {"train": np.arange(len(y)), "val": val, "test": order}
    return DatasetBundle(g, name, split)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--raw", type=Path, required=True, help="directory holding the ind.* files")
    parser.add_argument("--name", default="cora")
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--row-normalize", action="store_true")
    args = parser.parse_args(argv)
    bundle = convert(args.raw, args.name, args.row_normalize)
    save_dataset(bundle, args.out)
    g = bundle.graph
    print(f"{args.name}: {g.num_nodes} nodes, {g.num_edges} edges, {g.feature_dim} features, "
          f"{g.num_classes} classes -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
