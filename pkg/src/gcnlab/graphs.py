"""Graph datasets: Laplacian normalization, on-disk format, SBM generator.

A dataset directory contains:

* ``graph.json``    -- {"num_nodes", "num_features", "num_classes", "multilabel"}
* ``edges.tsv``     -- one undirected edge per line, two tab-separated 0-based ints
* ``features.csv``  -- N lines of comma-separated reals, d per line
* ``labels.csv``    -- N lines; one int per line, or C comma-separated 0/1 flags
* ``masks.json``    -- {"train": [...], "val": [...], "test": [...]}

Edge lists are symmetrized and deduplicated before normalization; the
loaded Laplacian defaults to the symmetric normalization with self-loops.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegreeZeroError, ParseError
from .matrices import SparseMatrix, as_dense


@dataclass
class GraphDataset:
    """Immutable graph with features, labels and a train/val/test split.

    ``labels`` is an int vector of class indices (single-label) or an
    N x C 0/1 matrix (multi-label).
    """

    laplacian: SparseMatrix
    features: np.ndarray
    labels: np.ndarray
    train_nodes: np.ndarray
    val_nodes: np.ndarray
    test_nodes: np.ndarray
    multilabel: bool
    num_classes: int

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def mask(self, split: str) -> np.ndarray:
        try:
            return {"train": self.train_nodes, "val": self.val_nodes, "test": self.test_nodes}[split]
        except KeyError:
            raise ConfigError(f"unknown split {split!r}") from None

    def validate(self) -> "GraphDataset":
        n = self.num_nodes
        if self.laplacian.n_rows != n or self.laplacian.n_cols != n:
            raise ParseError("laplacian shape does not match feature rows")
        if self.labels.shape[0] != n:
            raise ParseError("label rows do not match feature rows")
        if self.multilabel:
            if self.labels.ndim != 2 or self.labels.shape[1] != self.num_classes:
                raise ParseError("multi-label matrix must be N x num_classes")
            if not np.isin(self.labels, (0, 1)).all():
                raise ParseError("multi-label entries must be 0/1")
        else:
            if self.labels.ndim != 1:
                raise ParseError("single-label data must be one class index per node")
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise ParseError("class index outside [0, num_classes)")
        seen = set()
        for name, idx in (("train", self.train_nodes), ("val", self.val_nodes), ("test", self.test_nodes)):
            if len(idx) and (idx.min() < 0 or idx.max() >= n):
                raise ParseError(f"{name} mask index outside [0, {n})")
            here = set(idx.tolist())
            if len(here) != len(idx) or here & seen:
                raise ParseError("masks must be disjoint sets of node indices")
            seen |= here
        return self


def normalize_laplacian(adjacency: SparseMatrix, mode="symmetric", self_loops=True) -> SparseMatrix:
    """Degree-normalize a symmetric 0/1 adjacency matrix.

    ``symmetric`` returns D^-1/2 A' D^-1/2 and ``random_walk`` returns
    D^-1 A', where A' = A + I when ``self_loops`` is set. The sparsity
    pattern equals the pattern of A'.
    """
    if mode not in ("symmetric", "random_walk"):
        raise ConfigError(f"unknown normalization mode {mode!r}")
    n = adjacency.n_rows
    if adjacency.n_cols != n:
        raise ConfigError("adjacency must be square")
    rows = np.repeat(np.arange(n), np.diff(adjacency.row_offsets))
    cols = adjacency.col_indices
    if np.any(rows == cols):
        raise ConfigError("adjacency must have a zero diagonal; self-loops are added via the flag")
    if self_loops:
        rows = np.concatenate([rows, np.arange(n)])
        cols = np.concatenate([cols, np.arange(n)])
    degree = np.bincount(rows, minlength=n).astype(np.float64)
    if not self_loops:
        isolated = np.flatnonzero(degree == 0)
        if len(isolated):
            raise DegreeZeroError(
                f"node {int(isolated[0])} has degree 0; enable self_loops or drop the node"
            )
    if mode == "symmetric":
        inv_sqrt = 1.0 / np.sqrt(degree)
        vals = inv_sqrt[rows] * inv_sqrt[cols]
    else:
        vals = 1.0 / degree[rows]
    return SparseMatrix.from_coo(n, n, rows, cols, vals)


def adjacency_from_edges(n: int, edges) -> SparseMatrix:
    """0/1 adjacency from an undirected edge list (symmetrized, deduped)."""
    if len(edges) == 0:
        return SparseMatrix.from_coo(n, n, [], [], [])
    e = np.asarray(edges, dtype=np.int64)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    pair = rows * n + cols
    uniq = np.unique(pair)
    return SparseMatrix.from_coo(n, n, uniq // n, uniq % n, np.ones(len(uniq)))


# ----------------------------------------------------------------------
# On-disk format
# ----------------------------------------------------------------------


def _read_json(path: Path, required_keys):
    if not path.is_file():
        raise ParseError(f"{path}: file is missing")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    for key in required_keys:
        if key not in data:
            raise ParseError(f"{path}: missing key {key!r}")
    return data


def load_dataset(path, mode="symmetric", self_loops=True) -> GraphDataset:
    """Load and validate a dataset directory."""
    root = Path(path)
    meta = _read_json(root / "graph.json", ("num_nodes", "num_features", "num_classes", "multilabel"))
    n = int(meta["num_nodes"])
    d = int(meta["num_features"])
    num_classes = int(meta["num_classes"])
    multilabel = bool(meta["multilabel"])

    edges_path = root / "edges.tsv"
    if not edges_path.is_file():
        raise ParseError(f"{edges_path}: file is missing")
    edges = []
    with edges_path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{edges_path}: line {lineno}: expected two tab-separated ints")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"{edges_path}: line {lineno}: non-integer endpoint") from None
            if not (0 <= u < n and 0 <= v < n):
                raise ParseError(f"{edges_path}: line {lineno}: endpoint outside [0, {n})")
            if u == v:
                raise ParseError(f"{edges_path}: line {lineno}: self-edge {u} is not allowed")
            edges.append((u, v))

    feat_path = root / "features.csv"
    if not feat_path.is_file():
        raise ParseError(f"{feat_path}: file is missing")
    lines = feat_path.read_text().splitlines()
    if len(lines) != n:
        raise ParseError(f"{feat_path}: expected {n} rows, found {len(lines)}")
    features = np.empty((n, d), dtype=np.float64)
    for i, line in enumerate(lines):
        parts = line.split(",")
        if len(parts) != d:
            raise ParseError(f"{feat_path}: line {i + 1}: expected {d} values, found {len(parts)}")
        try:
            features[i] = [float(p) for p in parts]
        except ValueError:
            raise ParseError(f"{feat_path}: line {i + 1}: non-numeric value") from None

    label_path = root / "labels.csv"
    if not label_path.is_file():
        raise ParseError(f"{label_path}: file is missing")
    lines = label_path.read_text().splitlines()
    if len(lines) != n:
        raise ParseError(f"{label_path}: expected {n} rows, found {len(lines)}")
    if multilabel:
        labels = np.empty((n, num_classes), dtype=np.int64)
        for i, line in enumerate(lines):
            parts = line.split(",")
            if len(parts) != num_classes:
                raise ParseError(f"{label_path}: line {i + 1}: expected {num_classes} flags")
            try:
                row = [int(p) for p in parts]
            except ValueError:
                raise ParseError(f"{label_path}: line {i + 1}: non-integer flag") from None
            if any(fl not in (0, 1) for fl in row):
                raise ParseError(f"{label_path}: line {i + 1}: flags must be 0/1")
            labels[i] = row
    else:
        labels = np.empty(n, dtype=np.int64)
        for i, line in enumerate(lines):
            try:
                labels[i] = int(line.strip())
            except ValueError:
                raise ParseError(f"{label_path}: line {i + 1}: non-integer class index") from None
            if not (0 <= labels[i] < num_classes):
                raise ParseError(f"{label_path}: line {i + 1}: class index outside [0, {num_classes})")

    masks = _read_json(root / "masks.json", ("train", "val", "test"))
    splits = {}
    for name in ("train", "val", "test"):
        idx = np.asarray(sorted(masks[name]), dtype=np.int64)
        if len(idx) and (idx.min() < 0 or idx.max() >= n):
            raise ParseError(f"{root / 'masks.json'}: {name} index outside [0, {n})")
        splits[name] = idx

    adjacency = adjacency_from_edges(n, edges)
    laplacian = normalize_laplacian(adjacency, mode=mode, self_loops=self_loops)
    return GraphDataset(
        laplacian=laplacian,
        features=as_dense(features, n, d),
        labels=labels,
        train_nodes=splits["train"],
        val_nodes=splits["val"],
        test_nodes=splits["test"],
        multilabel=multilabel,
        num_classes=num_classes,
    ).validate()


def save_dataset(dataset: GraphDataset, path) -> None:
    """Write a dataset directory; edges come from the Laplacian pattern.

    Self-loop diagonal entries are not exported as edges, so a
    save/load round-trip preserves the numerical content exactly
    (floats are written with repr precision).
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    n = dataset.num_nodes
    meta = {
        "num_nodes": n,
        "num_features": dataset.num_features,
        "num_classes": dataset.num_classes,
        "multilabel": dataset.multilabel,
    }
    (root / "graph.json").write_text(json.dumps(meta) + "\n")

    lap = dataset.laplacian
    lines = []
    for i in range(n):
        cols, _ = lap.row_slice(i)
        for j in cols:
            if i < j:
                lines.append(f"{i}\t{j}")
    (root / "edges.tsv").write_text("\n".join(lines) + ("\n" if lines else ""))

    with (root / "features.csv").open("w") as fh:
        for row in dataset.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")

    with (root / "labels.csv").open("w") as fh:
        if dataset.multilabel:
            for row in dataset.labels:
                fh.write(",".join(str(int(x)) for x in row) + "\n")
        else:
            for y in dataset.labels:
                fh.write(f"{int(y)}\n")

    masks = {
        "train": dataset.train_nodes.tolist(),
        "val": dataset.val_nodes.tolist(),
        "test": dataset.test_nodes.tolist(),
    }
    (root / "masks.json").write_text(json.dumps(masks) + "\n")


# ----------------------------------------------------------------------
# Synthetic graphs
# ----------------------------------------------------------------------


def generate_sbm(
    n_nodes,
    n_blocks,
    p_in,
    p_out,
    feat_dim,
    noise=0.1,
    seed=0,
    mode="symmetric",
    self_loops=True,
) -> GraphDataset:
    """Stochastic-block-model dataset with one-hot-plus-noise features.

    Labels are block ids; features are the block's one-hot centroid plus
    Gaussian noise of the given standard deviation; masks are a
    stratified 60/20/20 split. Fully deterministic given ``seed``.
    """
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ConfigError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if n_blocks < 1 or n_blocks > n_nodes:
        raise ConfigError(f"n_blocks must be in [1, n_nodes], got {n_blocks}")
    if feat_dim < n_blocks:
        raise ConfigError(f"feat_dim must be >= n_blocks, got {feat_dim} < {n_blocks}")
    if noise < 0:
        raise ConfigError(f"noise must be nonnegative, got {noise}")

    rng = np.random.default_rng(seed)
    blocks = np.sort(np.arange(n_nodes) % n_blocks)

    edges = []
    for u in range(n_nodes):
        for v in range(u + 1, n_nodes):
            p = p_in if blocks[u] == blocks[v] else p_out
            if rng.random() < p:
                edges.append((u, v))

    features = np.zeros((n_nodes, feat_dim), dtype=np.float64)
    features[np.arange(n_nodes), blocks] = 1.0
    features += noise * rng.standard_normal((n_nodes, feat_dim))

    train, val, test = [], [], []
    for b in range(n_blocks):
        members = np.flatnonzero(blocks == b)
        members = rng.permutation(members)
        k = len(members)
        n_tr, n_val = int(0.6 * k), int(0.2 * k)
        train.extend(members[:n_tr])
        val.extend(members[n_tr : n_tr + n_val])
        test.extend(members[n_tr + n_val :])

    adjacency = adjacency_from_edges(n_nodes, edges)
    laplacian = normalize_laplacian(adjacency, mode=mode, self_loops=self_loops)
    return GraphDataset(
        laplacian=laplacian,
        features=features,
        labels=blocks.astype(np.int64),
        train_nodes=np.asarray(sorted(train), dtype=np.int64),
        val_nodes=np.asarray(sorted(val), dtype=np.int64),
        test_nodes=np.asarray(sorted(test), dtype=np.int64),
        multilabel=False,
        num_classes=n_blocks,
    ).validate()
