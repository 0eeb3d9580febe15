import importlib.util
import pickle
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from fedtad.data_io import load_dataset

SCRIPT = Path(__file__).resolve().parents[1] / "scripts" / "convert_planetoid.py"


def load_script():
    spec = importlib.util.spec_from_file_location("convert_planetoid", SCRIPT)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def write_raw(root: Path):
    """Six nodes: ids 0-3 in allx (0-1 also in x), test ids listed out of order as 5, 4."""
    root.mkdir()
    feats = np.arange(12.0).reshape(6, 2)
    onehot = np.eye(2)[[0, 1, 0, 1, 1, 0]]
    parts = {
        "x": sp.csr_matrix(feats[:2]), "y": onehot[:2],
        "allx": sp.csr_matrix(feats[:4]), "ally": onehot[:4],
        # the file order of the test block follows sorted ids; test.index is permuted
        "tx": sp.csr_matrix(feats[4:]), "ty": onehot[4:],
        "graph": {0: [1, 2], 1: [0], 2: [0, 2], 3: [4], 4: [3, 5], 5: [4]},
    }
    for name, obj in parts.items():
        with open(root / f"ind.toy.{name}", "wb") as fh:
            pickle.dump(obj, fh)
    (root / "ind.toy.test.index").write_text("5\n4\n")
    return feats, onehot


def test_convert_reorders_test_block(tmp_path):
    feats, onehot = write_raw(tmp_path / "raw")
    module = load_script()
    bundle = module.convert(tmp_path / "raw", "toy")
    g = bundle.graph
    # rows for ids 4 and 5 are swapped because test.index lists them as 5, 4
    np.testing.assert_array_equal(g.features[:4], feats[:4])
    np.testing.assert_array_equal(g.features[4], feats[5])
    np.testing.assert_array_equal(g.features[5], feats[4])
    assert g.labels.tolist() == [0, 1, 0, 1, 0, 1]
    assert g.num_edges == 4  # self-loop 2-2 dropped, duplicates merged
    assert bundle.split["train"].tolist() == [0, 1]
    assert bundle.split["val"].tolist() == [2, 3] and bundle.split["test"].tolist() == [4, 5]


def test_cli_round_trip(tmp_path, capsys):
    write_raw(tmp_path / "raw")
    module = load_script()
    assert module.main(["--raw", str(tmp_path / "raw"), "--name", "toy", "--out", str(tmp_path / "out"),
                        "--row-normalize"]) == 0
    loaded = load_dataset(tmp_path / "out")
    np.testing.assert_allclose(loaded.graph.features.sum(axis=1)[1:], 1.0)
    assert "6 nodes" in capsys.readouterr().out
