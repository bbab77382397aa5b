"""Shared fixtures: small hand-checkable graphs and random fixtures."""

import numpy as np
import pytest

from gcnlab.graphs import GraphDataset, adjacency_from_edges, generate_sbm, normalize_laplacian


def build_graph(
    n,
    edges,
    feat_dim=3,
    num_classes=2,
    seed=0,
    mode="symmetric",
    self_loops=True,
    multilabel=False,
    train=None,
):
    """GraphDataset with random features/labels and a train-heavy split."""
    rng = np.random.default_rng(seed)
    adjacency = adjacency_from_edges(n, edges)
    laplacian = normalize_laplacian(adjacency, mode=mode, self_loops=self_loops)
    features = rng.standard_normal((n, feat_dim))
    if multilabel:
        labels = rng.integers(0, 2, size=(n, num_classes))
    else:
        labels = rng.integers(0, num_classes, size=n)
    if train is None:
        train = np.arange(n)
    train = np.asarray(train, dtype=np.int64)
    return GraphDataset(
        laplacian=laplacian,
        features=features,
        labels=labels,
        train_nodes=train,
        val_nodes=np.asarray([], dtype=np.int64),
        test_nodes=np.asarray([], dtype=np.int64),
        multilabel=multilabel,
        num_classes=num_classes,
    ).validate()


def star4_edges():
    return [(0, 1), (0, 2), (0, 3)]


def cycle_edges(n):
    return [(i, (i + 1) % n) for i in range(n)]


def random_connected_edges(n, rng):
    """Random spanning tree plus a few extra edges."""
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    extra = rng.integers(0, n, size=(n, 2))
    edges += [(int(u), int(v)) for u, v in extra if u != v]
    return sorted(set((min(u, v), max(u, v)) for u, v in edges))


@pytest.fixture(scope="session")
def sbm60():
    return generate_sbm(60, 3, 0.3, 0.02, 8, 0.1, seed=13)


@pytest.fixture(scope="session")
def cycle6():
    """Vertex-transitive fixture: all Laplacian columns have equal norm,
    so layer-wise importance probabilities are exactly uniform."""
    return build_graph(6, cycle_edges(6), feat_dim=3, num_classes=2, seed=5)


@pytest.fixture(scope="session")
def star4():
    return build_graph(4, star4_edges(), feat_dim=3, num_classes=2, seed=6)


def max_abs_diff(a, b):
    return float(np.abs(np.asarray(a) - np.asarray(b)).max())


def max_rel_err(actual, expected, floor=1e-4):
    """Entrywise |a - e| / max(|a|, |e|, floor); the floor keeps
    finite-difference roundoff on near-zero entries from dominating."""
    a = np.asarray(actual, dtype=np.float64)
    e = np.asarray(expected, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(e)), floor)
    return float((np.abs(a - e) / denom).max())
