import json

import numpy as np
import pytest

from fedtad.data_io import (DatasetBundle, SbmSpec, generate_sbm, load_dataset, save_dataset)
from fedtad.errors import CountMismatchError, MalformedRowError, MissingFileError
from fedtad.reliability import class_homophily


def write_toy(root, labels="0\n1\n-1\n", features="1.0,0.0\n0.5,0.5\n0.0,1.0\n", edges="0,1\n1,2\n"):
    root.mkdir(parents=True, exist_ok=True)
    (root / "meta.json").write_text(json.dumps(
        {"num_nodes": 3, "num_classes": 2, "feature_dim": 2, "name": "toy"}))
    (root / "edges.csv").write_text(edges)
    (root / "features.csv").write_text(features)
    (root / "labels.csv").write_text(labels)
    return root


def test_load_toy(tmp_path):
    bundle = load_dataset(write_toy(tmp_path / "toy"))
    g = bundle.graph
    assert g.num_nodes == 3 and g.num_edges == 2
    assert bundle.name == "toy"
    assert g.labels.tolist() == [0, 1, -1]
    assert bundle.split is None


def test_label_out_of_range_names_line(tmp_path):
    root = write_toy(tmp_path / "toy", labels="0\n2\n1\n")
    with pytest.raises(MalformedRowError) as err:
        load_dataset(root)
    assert err.value.line == 2
    assert "labels.csv:2" in str(err.value)


def test_feature_arity(tmp_path):
    root = write_toy(tmp_path / "toy", features="1.0,0.0\n0.5\n0.0,1.0\n")
    with pytest.raises(MalformedRowError, match="features.csv:2"):
        load_dataset(root)


def test_missing_file(tmp_path):
    root = write_toy(tmp_path / "toy")
    (root / "edges.csv").unlink()
    with pytest.raises(MissingFileError, match="edges.csv"):
        load_dataset(root)


def test_count_mismatch(tmp_path):
    root = write_toy(tmp_path / "toy", labels="0\n1\n")
    with pytest.raises(CountMismatchError, match="labels.csv"):
        load_dataset(root)


def test_bad_edge_row(tmp_path):
    root = write_toy(tmp_path / "toy", edges="0,1\n1,9\n")
    with pytest.raises(MalformedRowError, match="edges.csv:2"):
        load_dataset(root)


def test_round_trip_is_byte_identical(tmp_path):
    bundle = generate_sbm(SbmSpec([5, 7], 0.5, 0.1, 3, 2.0, 0.7, seed=3))
    first = save_dataset(bundle, tmp_path / "a")
    second = save_dataset(load_dataset(first), tmp_path / "b")
    for name in ("meta.json", "edges.csv", "features.csv", "labels.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
    lines = (first / "edges.csv").read_text().split()
    pairs = [tuple(map(int, line.split(","))) for line in lines]
    assert pairs == sorted(pairs) and all(u < v for u, v in pairs)


def test_split_round_trip(tmp_path):
    bundle = generate_sbm(SbmSpec([3, 3], 0.5, 0.1, 2, seed=0))
    bundle = DatasetBundle(bundle.graph, "s", {"train": np.array([0, 1]), "val": np.array([2]),
                                               "test": np.array([3, 4])})
    loaded = load_dataset(save_dataset(bundle, tmp_path / "s"))
    assert loaded.split["test"].tolist() == [3, 4]


def test_overlapping_split_rejected():
    bundle = generate_sbm(SbmSpec([3, 3], 0.5, 0.1, 2, seed=0))
    with pytest.raises(Exception, match="overlap"):
        DatasetBundle(bundle.graph, "s", {"train": [0, 1], "val": [1], "test": []})


def test_sbm_pure_homophily():
    g = generate_sbm(SbmSpec([6, 6], 1.0, 0.0, 2, seed=1)).graph
    assert class_homophily(g, 0) == 1.0 and class_homophily(g, 1) == 1.0


def test_sbm_pure_heterophily():
    g = generate_sbm(SbmSpec([6, 6], 0.0, 1.0, 2, seed=1)).graph
    assert class_homophily(g, 0) == 0.0 and class_homophily(g, 1) == 0.0


def test_sbm_deterministic():
    spec = SbmSpec([20, 30], 0.3, 0.05, 4, seed=11)
    a, b = generate_sbm(spec).graph, generate_sbm(spec).graph
    assert np.array_equal(a.edge_array(), b.edge_array())
    assert np.array_equal(a.features, b.features)


@pytest.mark.parametrize("seed", range(5))
def test_sbm_density_within_three_sigma(seed):
    sizes, p_in, p_out = [60, 50, 40], 0.1, 0.02
    g = generate_sbm(SbmSpec(sizes, p_in, p_out, 3, seed=seed)).graph
    intra_pairs = sum(n * (n - 1) // 2 for n in sizes)
    inter_pairs = sum(a * b for i, a in enumerate(sizes) for b in sizes[i + 1:])
    mean = intra_pairs * p_in + inter_pairs * p_out
    assert mean >= 500
    sd = np.sqrt(intra_pairs * p_in * (1 - p_in) + inter_pairs * p_out * (1 - p_out))
    assert abs(g.num_edges - mean) <= 3 * sd


def test_sbm_spec_validation():
    with pytest.raises(ValueError):
        SbmSpec([3], 1.5, 0.0, 2)
    with pytest.raises(ValueError):
        SbmSpec([3, 3], 0.5, 0.0, 2, class_center_separation=-1)
