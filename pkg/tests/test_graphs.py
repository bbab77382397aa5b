"""Laplacian normalization, dataset directory round-trips, and the SBM
generator's distributional contracts."""

import math

import numpy as np
import pytest

from gcnlab.errors import ConfigError, DegreeZeroError, ParseError
from gcnlab.graphs import (
    adjacency_from_edges,
    generate_sbm,
    load_dataset,
    normalize_laplacian,
    save_dataset,
)

from conftest import star4_edges


class TestNormalizeLaplacian:
    def test_two_node_path_unit_degrees(self):
        adj = adjacency_from_edges(2, [(0, 1)])
        lap = normalize_laplacian(adj, mode="symmetric", self_loops=False)
        assert np.array_equal(lap.to_dense(), np.array([[0.0, 1.0], [1.0, 0.0]]))

    def test_triangle_with_loops_uniform_entries(self):
        adj = adjacency_from_edges(3, [(0, 1), (1, 2), (0, 2)])
        lap = normalize_laplacian(adj, mode="symmetric", self_loops=True)
        assert np.abs(lap.to_dense() - 1.0 / 3.0).max() < 1e-15

    def test_star_random_walk_rows(self):
        adj = adjacency_from_edges(4, star4_edges())
        lap = normalize_laplacian(adj, mode="random_walk", self_loops=False).to_dense()
        assert np.array_equal(lap[0], np.array([0.0, 1 / 3, 1 / 3, 1 / 3]))
        for leaf in (1, 2, 3):
            row = np.zeros(4)
            row[0] = 1.0
            assert np.array_equal(lap[leaf], row)

    def test_symmetric_mode_exactly_symmetric(self):
        rng = np.random.default_rng(2)
        for trial in range(10):
            n = int(rng.integers(3, 9))
            edges = [(int(u), int(v)) for u, v in rng.integers(0, n, size=(3 * n, 2)) if u != v]
            if not edges:
                continue
            lap = normalize_laplacian(adjacency_from_edges(n, edges), "symmetric", True).to_dense()
            assert np.abs(lap - lap.T).max() == 0.0

    def test_random_walk_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        n = 8
        edges = [(int(u), int(v)) for u, v in rng.integers(0, n, size=(20, 2)) if u != v]
        lap = normalize_laplacian(adjacency_from_edges(n, edges), "random_walk", True).to_dense()
        assert np.abs(lap.sum(axis=1) - 1.0).max() < 1e-12

    def test_isolated_node_without_loops_raises_naming_node(self):
        adj = adjacency_from_edges(3, [(0, 1)])  # node 2 isolated
        for mode in ("symmetric", "random_walk"):
            with pytest.raises(DegreeZeroError, match="node 2"):
                normalize_laplacian(adj, mode=mode, self_loops=False)

    def test_isolated_node_allowed_with_loops(self):
        adj = adjacency_from_edges(3, [(0, 1)])
        lap = normalize_laplacian(adj, mode="symmetric", self_loops=True).to_dense()
        assert lap[2, 2] == 1.0

    def test_nonzero_diagonal_rejected(self):
        from gcnlab.matrices import SparseMatrix

        adj = SparseMatrix.from_coo(2, 2, [0, 0, 1], [0, 1, 0], [1.0, 1.0, 1.0])
        with pytest.raises(ConfigError):
            normalize_laplacian(adj, "symmetric", True)


class TestDatasetIO:
    def _write_minimal(self, root):
        (root / "graph.json").write_text(
            '{"num_nodes": 2, "num_features": 1, "num_classes": 2, "multilabel": false}'
        )
        (root / "edges.tsv").write_text("0\t1\n")
        (root / "features.csv").write_text("0.5\n-1.25\n")
        (root / "labels.csv").write_text("0\n1\n")
        (root / "masks.json").write_text('{"train": [0], "val": [1], "test": []}')

    def test_minimal_two_node_dataset(self, tmp_path):
        self._write_minimal(tmp_path)
        ds = load_dataset(tmp_path)
        assert ds.num_nodes == 2 and ds.num_features == 1 and ds.num_classes == 2
        assert ds.train_nodes.tolist() == [0] and ds.val_nodes.tolist() == [1]

    def test_duplicate_edges_deduplicated(self, tmp_path):
        self._write_minimal(tmp_path)
        once = load_dataset(tmp_path)
        (tmp_path / "edges.tsv").write_text("0\t1\n0\t1\n1\t0\n")
        twice = load_dataset(tmp_path)
        assert np.array_equal(once.laplacian.to_dense(), twice.laplacian.to_dense())

    def test_label_row_count_mismatch(self, tmp_path):
        self._write_minimal(tmp_path)
        (tmp_path / "labels.csv").write_text("0\n")
        with pytest.raises(ParseError, match="labels.csv"):
            load_dataset(tmp_path)

    def test_missing_file(self, tmp_path):
        self._write_minimal(tmp_path)
        (tmp_path / "features.csv").unlink()
        with pytest.raises(ParseError, match="features.csv"):
            load_dataset(tmp_path)

    def test_out_of_range_label(self, tmp_path):
        self._write_minimal(tmp_path)
        (tmp_path / "labels.csv").write_text("0\n5\n")
        with pytest.raises(ParseError, match="line 2"):
            load_dataset(tmp_path)

    def test_out_of_range_mask_index(self, tmp_path):
        self._write_minimal(tmp_path)
        (tmp_path / "masks.json").write_text('{"train": [0], "val": [7], "test": []}')
        with pytest.raises(ParseError, match="val"):
            load_dataset(tmp_path)

    def test_self_edge_rejected_with_line(self, tmp_path):
        self._write_minimal(tmp_path)
        (tmp_path / "edges.tsv").write_text("0\t1\n1\t1\n")
        with pytest.raises(ParseError, match="line 2"):
            load_dataset(tmp_path)

    def test_save_load_round_trip(self, tmp_path):
        ds = generate_sbm(20, 2, 0.6, 0.1, 5, 0.2, seed=8)
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert np.abs(back.features - ds.features).max() < 1e-12
        assert np.array_equal(back.labels, ds.labels)
        assert np.abs(back.laplacian.to_dense() - ds.laplacian.to_dense()).max() < 1e-12
        for split in ("train", "val", "test"):
            assert np.array_equal(back.mask(split), ds.mask(split))


class TestGenerateSbm:
    def test_degenerate_probabilities_two_triangles(self):
        ds = generate_sbm(6, 2, 1.0, 0.0, 2, 0.0, seed=1)
        lap = ds.laplacian.to_dense()
        # no cross-block entries: nodes 0-2 vs 3-5 stay disconnected
        assert np.abs(lap[:3, 3:]).max() == 0.0
        assert np.abs(lap[3:, :3]).max() == 0.0

    def test_same_seed_identical_dataset(self):
        a = generate_sbm(15, 3, 0.5, 0.05, 4, 0.3, seed=21)
        b = generate_sbm(15, 3, 0.5, 0.05, 4, 0.3, seed=21)
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.laplacian.values, b.laplacian.values)
        assert np.array_equal(a.laplacian.col_indices, b.laplacian.col_indices)
        for split in ("train", "val", "test"):
            assert np.array_equal(a.mask(split), b.mask(split))

    def test_within_block_edge_count_binomial_oracle(self):
        ds = generate_sbm(60, 3, 0.3, 0.02, 8, 0.1, seed=13)
        lap = ds.laplacian.to_dense()
        blocks = ds.labels
        within = 0
        for u in range(60):
            for v in range(u + 1, 60):
                if blocks[u] == blocks[v] and lap[u, v] != 0:
                    within += 1
        trials = 3 * math.comb(20, 2)
        mean = 0.3 * trials
        std = math.sqrt(trials * 0.3 * 0.7)
        assert abs(within - mean) < 4 * std

    def test_stratified_split_sizes(self):
        ds = generate_sbm(60, 3, 0.3, 0.02, 8, 0.1, seed=13)
        assert len(ds.train_nodes) == 36 and len(ds.val_nodes) == 12 and len(ds.test_nodes) == 12
        for block in range(3):
            members = np.flatnonzero(ds.labels == block)
            assert np.isin(ds.train_nodes, members).sum() == 12

    def test_parameter_validation(self):
        with pytest.raises(ConfigError):
            generate_sbm(10, 2, 0.1, 0.5, 4)  # p_out > p_in
        with pytest.raises(ConfigError):
            generate_sbm(10, 2, 1.5, 0.1, 4)
        with pytest.raises(ConfigError):
            generate_sbm(10, 12, 0.5, 0.1, 20)  # more blocks than nodes
        with pytest.raises(ConfigError):
            generate_sbm(10, 3, 0.5, 0.1, 2)  # feat_dim < blocks

    def test_labels_are_block_ids_and_features_centered(self):
        ds = generate_sbm(30, 3, 0.5, 0.05, 6, 0.01, seed=4)
        for b in range(3):
            members = ds.labels == b
            centroid = ds.features[members].mean(axis=0)
            assert centroid[b] > 0.9  # one-hot coordinate dominates at low noise
