import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ptsearch.graph import (
    DatasetError,
    FeatureBundle,
    HeteroGraph,
    SplitAssignment,
    load_dataset,
    normalize_numerical,
    stratified_split,
    write_dataset,
)

from conftest import tiny_dataset


def _bundle(numerical, labels=None):
    n = len(numerical)
    labels = np.zeros(n, dtype=int) if labels is None else labels
    z = np.zeros((n, 1))
    return FeatureBundle(z, z, np.asarray(numerical, float), z, labels)


def _four_node_fixture():
    edges = {"follower": (np.array([0, 1, 2]), np.array([1, 2, 3])),
             "following": (np.array([3, 2, 1]), np.array([0, 0, 1]))}
    return HeteroGraph(4, ("follower", "following"), edges)


class TestHeteroGraph:
    def test_fixture_counts(self):
        g = _four_node_fixture()
        assert g.num_nodes == 4
        assert g.num_edges == 6

    def test_in_neighbors_sorted(self):
        g = _four_node_fixture()
        assert g.in_neighbors("following", 0).tolist() == [2, 3]
        assert g.in_neighbors("following", 3).tolist() == []
        assert g.in_degree("following").tolist() == [2, 1, 0, 0]

    def test_mean_adjacency_rows(self):
        g = _four_node_fixture()
        a = g.mean_adjacency("following").toarray()
        assert a[0].tolist() == [0, 0, 0.5, 0.5]
        assert a[3].sum() == 0

    @pytest.mark.parametrize("edges", [
        {"a": (np.array([0]), np.array([4]))},
        {"a": (np.array([-1]), np.array([0]))},
    ])
    def test_endpoint_out_of_range(self, edges):
        with pytest.raises(ValueError, match="out of range"):
            HeteroGraph(4, ("a",), edges)

    def test_relations_nonempty_and_unique(self):
        with pytest.raises(ValueError):
            HeteroGraph(2, (), {})
        with pytest.raises(ValueError, match="duplicate"):
            HeteroGraph(2, ("a", "a"), {"a": ([], [])})

    def test_immutable(self):
        g = _four_node_fixture()
        with pytest.raises(ValueError):
            g.edges["follower"][0][0] = 3


class TestNormalize:
    def test_hand_values(self):
        split = SplitAssignment(np.zeros(3, dtype=int))
        out = normalize_numerical(_bundle([[1.0], [2.0], [3.0]]), split)
        # mu = 2, population sigma = sqrt(2/3)
        s = np.sqrt(2 / 3)
        np.testing.assert_allclose(out.numerical[:, 0], [-1 / s, 0, 1 / s], atol=1e-12)
        np.testing.assert_allclose(out.numerical[:, 0], [-1.224745, 0, 1.224745], atol=1e-6)

    def test_constant_column_is_zero(self):
        split = SplitAssignment(np.zeros(3, dtype=int))
        out = normalize_numerical(_bundle([[5.0], [5.0], [5.0]]), split)
        assert out.numerical[:, 0].tolist() == [0, 0, 0]

    def test_statistics_from_train_rows_only(self):
        split = SplitAssignment(np.array([0, 0, 1, 2]))
        out = normalize_numerical(_bundle([[0.0], [2.0], [100.0], [-50.0]]), split)
        np.testing.assert_allclose(out.numerical[:, 0], [-1, 1, 99, -51])

    def test_already_standardized_unchanged(self):
        x = np.array([[-1.0], [1.0]])
        out = normalize_numerical(_bundle(x), SplitAssignment(np.zeros(2, dtype=int)))
        np.testing.assert_allclose(out.numerical, x, atol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (12, 3), elements=st.floats(-1e3, 1e3, allow_subnormal=False)))
    def test_train_moments_and_idempotence(self, x):
        split = SplitAssignment(np.array([0] * 8 + [1, 1, 2, 2]))
        once = normalize_numerical(_bundle(x), split)
        twice = normalize_numerical(once, split)
        np.testing.assert_allclose(twice.numerical, once.numerical, atol=1e-9)
        tr = once.numerical[:8]
        for j in range(3):
            if np.ptp(x[:8, j]) > 1e-6:
                assert abs(tr[:, j].mean()) < 1e-6
                assert abs(tr[:, j].std() - 1) < 1e-6


class TestStratifiedSplit:
    def test_sizes_70_20_10(self):
        labels = np.array([0] * 60 + [1] * 40)
        s = stratified_split(labels, (0.7, 0.2, 0.1), seed=1)
        assert s.sizes() == {"train": 70, "val": 20, "test": 10}

    def test_class_balance_per_split(self):
        labels = np.array([0] * 60 + [1] * 40)
        s = stratified_split(labels, seed=4)
        for name, ratio in zip(("train", "val", "test"), (0.7, 0.2, 0.1)):
            m = s.mask(name)
            assert abs((labels[m] == 1).sum() - 40 * ratio) <= 1
            assert abs((labels[m] == 0).sum() - 60 * ratio) <= 1

    def test_deterministic(self):
        labels = np.random.default_rng(0).integers(0, 2, 57)
        a = stratified_split(labels, seed=9).codes
        b = stratified_split(labels, seed=9).codes
        assert np.array_equal(a, b)

    def test_class_too_small(self):
        with pytest.raises(ValueError, match="at least 3"):
            stratified_split(np.array([0, 0, 0, 0, 1, 1]))

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.sampled_from([-1, 0, 1]), min_size=10, max_size=80), st.integers(0, 1000))
    def test_disjoint_exhaustive(self, labels, seed):
        labels = np.array(labels)
        if min((labels == 0).sum(), (labels == 1).sum()) < 3:
            return
        s = stratified_split(labels, seed=seed)
        labeled = labels != -1
        assert (s.codes[labeled] >= 0).all()
        assert (s.codes[~labeled] == -1).all()
        assert sum(s.sizes().values()) == labeled.sum()


class TestDiskFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        ds = tiny_dataset(n=9, seed=5)
        write_dataset(ds, tmp_path)
        back = load_dataset(tmp_path)
        assert back.graph.num_nodes == 9
        for r in ds.graph.relations:
            want = sorted(zip(*map(list, ds.graph.edges[r])))
            got = sorted(zip(*map(list, back.graph.edges[r])))
            assert want == got
        for b in ("desc", "tweet", "numerical", "categorical"):
            assert np.array_equal(ds.features.block(b), back.features.block(b))
        assert np.array_equal(ds.split.codes, back.split.codes)
        assert back.meta.dims == ds.meta.dims

    def test_missing_splits_generates_seeded_split(self, tmp_path):
        labels = np.array([0, 1] * 10)
        ds = tiny_dataset(n=20)
        ds = ds._replace(features=FeatureBundle(ds.features.desc, ds.features.tweet, ds.features.numerical,
                                                ds.features.categorical, labels))
        write_dataset(ds, tmp_path, write_splits=False)
        a = load_dataset(tmp_path, split_seed=3).split.codes
        assert np.array_equal(a, stratified_split(labels, seed=3).codes)

    def test_label_out_of_range(self, tmp_path):
        write_dataset(tiny_dataset(), tmp_path)
        p = tmp_path / "labels.csv"
        lines = p.read_text().splitlines()
        lines[3] = "2,2"
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetError, match=r"labels.csv:4: label out of range"):
            load_dataset(tmp_path)

    def test_missing_file(self, tmp_path):
        write_dataset(tiny_dataset(), tmp_path)
        (tmp_path / "features_tweet.csv").unlink()
        with pytest.raises(DatasetError, match="features_tweet.csv: missing file"):
            load_dataset(tmp_path)

    def test_dimension_mismatch(self, tmp_path):
        write_dataset(tiny_dataset(), tmp_path)
        meta = json.loads((tmp_path / "meta.json").read_text())
        meta["dims"]["desc"] = 7
        (tmp_path / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(DatasetError, match="features_desc.csv:1: 3 feature columns, meta.json declares 7"):
            load_dataset(tmp_path)

    def test_edge_out_of_range(self, tmp_path):
        write_dataset(tiny_dataset(), tmp_path)
        with open(tmp_path / "edges_follower.csv", "a") as fh:
            fh.write("0,99\n")
        with pytest.raises(DatasetError, match=r"edges_follower.csv:\d+: edge endpoint out of range"):
            load_dataset(tmp_path)

    def test_unlabeled_nodes_round_trip(self, tmp_path):
        ds = tiny_dataset(n=10)
        labels = ds.features.labels.copy()
        labels[0] = -1
        codes = ds.split.codes.copy()
        codes[0] = -1
        f = ds.features
        ds = ds._replace(features=FeatureBundle(f.desc, f.tweet, f.numerical, f.categorical, labels),
                         split=SplitAssignment(codes))
        write_dataset(ds, tmp_path)
        back = load_dataset(tmp_path)
        assert back.features.labels[0] == -1
        assert back.split.codes[0] == -1
