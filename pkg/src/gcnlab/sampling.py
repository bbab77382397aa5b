"""Mini-batch sampling strategies.

Every sampler turns (graph, batch) into a :class:`LayerPlan`: one sparse
Laplacian and a pair of node sets per layer. Entries of a sampled
Laplacian are always the corresponding full-Laplacian entry divided by a
positive weight, so supp(sampled) is contained in supp(full).

Strategies
----------
* ``exact``     -- all neighbors, unweighted; deterministic.
* ``nodewise``  -- per output node, min(s, deg) neighbors uniformly
  without replacement, kept entries scaled by deg/s.
* ``fastgcn``   -- per layer, a node set drawn without replacement with
  probability proportional to squared column norms of the full
  Laplacian; kept columns scaled by 1/(m * p_j).
* ``ladies``    -- like fastgcn but candidates and probabilities are
  restricted to the rows of the layer above (layer-dependent).
* ``subgraph``  -- a single node set shared by every layer; the plan's
  Laplacian is the set-to-set restriction, scaled by 1/(m * p_j).

Enumeration helpers walk the exact outcome distribution of each
strategy on small inputs; they back the propagation-matrix oracle and
the bias/variance analysis.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, OracleTooLargeError, SamplerDegenerateError, ShapeError
from .graphs import GraphDataset
from .matrices import SparseMatrix

ENUMERATION_LIMIT = 100_000

STRATEGIES = ("exact", "nodewise", "fastgcn", "ladies", "subgraph")


@dataclass
class SamplerConfig:
    strategy: str
    neighbors_per_node: int = 0  # nodewise
    samples_per_layer: int = 0  # fastgcn / ladies / subgraph
    seed: int = 0

    def validate(self) -> "SamplerConfig":
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown sampling strategy {self.strategy!r}")
        if self.strategy == "nodewise" and self.neighbors_per_node < 1:
            raise ConfigError("nodewise sampling needs neighbors_per_node >= 1")
        if self.strategy in ("fastgcn", "ladies") and self.samples_per_layer < 1:
            raise ConfigError(f"{self.strategy} needs samples_per_layer >= 1")
        if self.strategy == "subgraph" and self.samples_per_layer < 2:
            raise ConfigError("subgraph sampling needs a node-set size >= 2")
        return self


@dataclass
class PlanLayer:
    laplacian: SparseMatrix  # full N x N shape, restricted support
    input_nodes: np.ndarray
    output_nodes: np.ndarray


@dataclass
class LayerPlan:
    batch: np.ndarray  # nodes the loss is evaluated on
    layers: list = field(default_factory=list)  # index 0 = deepest layer

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def num_nodes(self) -> int:
        return self.layers[0].laplacian.n_rows

    def validate(self, graph: GraphDataset) -> "LayerPlan":
        # subgraph plans evaluate the loss on a subset of the shared node set,
        # so containment (not equality) is the invariant
        if not np.all(np.isin(self.batch, self.layers[-1].output_nodes)):
            raise ShapeError("loss batch is not covered by the top layer's output nodes")
        for upper, lower in zip(self.layers[1:], self.layers[:-1]):
            if not np.array_equal(upper.input_nodes, lower.output_nodes):
                raise ShapeError("layer node sets do not chain")
        for layer in self.layers:
            lap = layer.laplacian
            out_mask = np.zeros(lap.n_rows, dtype=bool)
            out_mask[layer.output_nodes] = True
            in_mask = np.zeros(lap.n_cols, dtype=bool)
            in_mask[layer.input_nodes] = True
            rows = np.repeat(np.arange(lap.n_rows), np.diff(lap.row_offsets))
            if not (out_mask[rows].all() and in_mask[lap.col_indices].all()):
                raise ShapeError("sampled Laplacian has support outside its node sets")
        return self


def _neighbor_closure(lap: SparseMatrix, nodes) -> np.ndarray:
    """Nodes plus all their neighbors in the Laplacian's support."""
    seen = set(int(i) for i in nodes)
    for i in nodes:
        cols, _ = lap.row_slice(i)
        seen.update(int(j) for j in cols)
    return np.asarray(sorted(seen), dtype=np.int64)


def _restricted(lap: SparseMatrix, rows, col_weight=None) -> SparseMatrix:
    """Laplacian restricted to the given rows; optional per-column
    multiplicative weight with zero meaning "column dropped"."""
    r_idx, c_idx, vals = [], [], []
    for i in rows:
        cols, v = lap.row_slice(i)
        if col_weight is None:
            keep = np.ones(len(cols), dtype=bool)
            scaled = v
        else:
            w = col_weight[cols]
            keep = w != 0.0
            scaled = v * w
        r_idx.extend([int(i)] * int(keep.sum()))
        c_idx.extend(cols[keep].tolist())
        vals.extend(scaled[keep].tolist())
    return SparseMatrix.from_coo(lap.n_rows, lap.n_cols, r_idx, c_idx, vals)


def sample_exact(graph: GraphDataset, batch, n_layers: int) -> LayerPlan:
    """All-neighbor plan; feeding it to the sampled forward reproduces
    the full-batch computation on the batch rows."""
    batch = _check_batch(graph, batch)
    layers = []
    out_nodes = batch
    for _ in range(n_layers):
        in_nodes = _neighbor_closure(graph.laplacian, out_nodes)
        layers.append(PlanLayer(_restricted(graph.laplacian, out_nodes), in_nodes, out_nodes))
        out_nodes = in_nodes
    layers.reverse()
    return LayerPlan(batch, layers)


def sample_nodewise(graph: GraphDataset, batch, n_layers: int, s: int, rng) -> LayerPlan:
    """Neighbor sampling: per output node, keep min(s, deg) neighbors
    drawn uniformly without replacement, scaled by deg/s."""
    batch = _check_batch(graph, batch)
    if s < 1:
        raise ConfigError("neighbors_per_node must be >= 1")
    layer_rngs = rng.spawn(n_layers)
    layers = []
    out_nodes = batch
    for depth in range(n_layers):
        layer_rng = layer_rngs[depth]
        r_idx, c_idx, vals = [], [], []
        in_set = set()
        for i in out_nodes:
            cols, v = graph.laplacian.row_slice(i)
            deg = len(cols)
            if deg == 0:
                continue
            m = min(s, deg)
            pick = np.sort(layer_rng.choice(deg, size=m, replace=False))
            scale = deg / s
            r_idx.extend([int(i)] * m)
            c_idx.extend(cols[pick].tolist())
            vals.extend((v[pick] * scale).tolist())
            in_set.update(int(j) for j in cols[pick])
        in_nodes = np.asarray(sorted(in_set), dtype=np.int64)
        lap = SparseMatrix.from_coo(graph.num_nodes, graph.num_nodes, r_idx, c_idx, vals)
        layers.append(PlanLayer(lap, in_nodes, out_nodes))
        out_nodes = in_nodes
    layers.reverse()
    return LayerPlan(batch, layers)


def _layer_probabilities(graph: GraphDataset, upper, dependent: bool) -> np.ndarray:
    """Importance distribution over candidate columns for one layer."""
    if dependent:
        weights = np.zeros(graph.num_nodes)
        for i in upper:
            cols, v = graph.laplacian.row_slice(i)
            weights[cols] += v**2
    else:
        weights = graph.laplacian.column_sq_norms()
    total = weights.sum()
    if total == 0.0:
        raise SamplerDegenerateError("all candidate probabilities are zero")
    return weights / total


def sample_layerwise(graph: GraphDataset, batch, n_layers: int, s: int, dependent: bool, rng) -> LayerPlan:
    """Layer-wise importance sampling (dependent = layer-dependent
    candidates; independent = whole-graph candidates)."""
    batch = _check_batch(graph, batch)
    if s < 1:
        raise ConfigError("samples_per_layer must be >= 1")
    layer_rngs = rng.spawn(n_layers)
    layers = []
    upper = batch
    for depth in range(n_layers):
        p = _layer_probabilities(graph, upper, dependent)
        m = min(s, int(np.count_nonzero(p)))
        drawn = np.sort(layer_rngs[depth].choice(graph.num_nodes, size=m, replace=False, p=p))
        weight = np.zeros(graph.num_nodes)
        weight[drawn] = 1.0 / (m * p[drawn])
        lap = _restricted(graph.laplacian, upper, col_weight=weight)
        layers.append(PlanLayer(lap, drawn, upper))
        upper = drawn
    layers.reverse()
    return LayerPlan(batch, layers)


def sample_subgraph(graph: GraphDataset, batch_size: int, n_layers: int, rng, max_tries=16) -> LayerPlan:
    """One shared node set for every layer; the loss batch is the
    intersection with the training mask (resampled when empty)."""
    if batch_size < 2:
        raise ConfigError("subgraph node-set size must be >= 2")
    p = _layer_probabilities(graph, None, dependent=False)
    m = min(batch_size, int(np.count_nonzero(p)))
    for _ in range(max_tries):
        drawn = np.sort(rng.choice(graph.num_nodes, size=m, replace=False, p=p))
        batch = drawn[np.isin(drawn, graph.train_nodes)]
        if len(batch):
            break
    else:
        raise SamplerDegenerateError(f"no training node sampled in {max_tries} subgraph draws")
    weight = np.zeros(graph.num_nodes)
    weight[drawn] = 1.0 / (m * p[drawn])
    lap = _restricted(graph.laplacian, drawn, col_weight=weight)
    shared = PlanLayer(lap, drawn, drawn)
    return LayerPlan(batch, [shared] * n_layers)


def sample_plan(graph: GraphDataset, config: SamplerConfig, batch, n_layers: int, rng) -> LayerPlan:
    """Dispatch on the configured strategy. For ``subgraph`` the batch
    argument is ignored (the sampler determines its own loss batch)."""
    config.validate()
    if config.strategy == "exact":
        return sample_exact(graph, batch, n_layers)
    if config.strategy == "nodewise":
        return sample_nodewise(graph, batch, n_layers, config.neighbors_per_node, rng)
    if config.strategy == "fastgcn":
        return sample_layerwise(graph, batch, n_layers, config.samples_per_layer, False, rng)
    if config.strategy == "ladies":
        return sample_layerwise(graph, batch, n_layers, config.samples_per_layer, True, rng)
    return sample_subgraph(graph, config.samples_per_layer, n_layers, rng)


def _check_batch(graph: GraphDataset, batch) -> np.ndarray:
    batch = np.asarray(sorted(int(i) for i in np.asarray(batch).ravel()), dtype=np.int64)
    if len(batch) == 0:
        raise ConfigError("batch must be nonempty")
    if batch.min() < 0 or batch.max() >= graph.num_nodes:
        raise ConfigError("batch index outside the node range")
    return batch


# ----------------------------------------------------------------------
# Exact enumeration of sampler outcome distributions
# ----------------------------------------------------------------------


def _guard(count: float):
    if count > ENUMERATION_LIMIT:
        raise OracleTooLargeError(
            f"outcome space has ~{count:.0f} configurations (limit {ENUMERATION_LIMIT})"
        )


def _sequential_set_probs(p: np.ndarray, m: int) -> dict:
    """Distribution over size-m sets under draw-without-replacement with
    per-step renormalization (what ``Generator.choice(replace=False, p=p)``
    samples). Keys are sorted tuples of node ids."""
    support = np.flatnonzero(p)
    k = len(support)
    _guard(math.perm(k, m))
    out = {}

    def rec(prefix, remaining_mass, prob):
        if len(prefix) == m:
            key = tuple(sorted(prefix))
            out[key] = out.get(key, 0.0) + prob
            return
        for j in support:
            if j in prefix:
                continue
            rec(prefix + [int(j)], remaining_mass - p[j], prob * p[j] / remaining_mass)

    rec([], 1.0, 1.0)
    return out


def _nodewise_layer_outcomes(graph, out_nodes, s):
    """All (layer matrix triplets, input set, prob) choices for one
    nodewise layer: the cartesian product of per-row subset draws."""
    per_row = []
    total = 1
    for i in out_nodes:
        cols, v = graph.laplacian.row_slice(i)
        deg = len(cols)
        if deg == 0:
            per_row.append([((), 1.0, int(i))])
            continue
        m = min(s, deg)
        n_subsets = math.comb(deg, m)
        total *= n_subsets
        _guard(total)
        choices = []
        for pick in itertools.combinations(range(deg), m):
            pick = np.asarray(pick, dtype=np.int64)
            entries = tuple(zip(cols[pick].tolist(), (v[pick] * (deg / s)).tolist()))
            choices.append((entries, 1.0 / n_subsets, int(i)))
        per_row.append(choices)
    for combo in itertools.product(*per_row):
        prob = 1.0
        r_idx, c_idx, vals = [], [], []
        in_set = set()
        for entries, q, i in combo:
            prob *= q
            for j, val in entries:
                r_idx.append(i)
                c_idx.append(j)
                vals.append(val)
                in_set.add(j)
        in_nodes = np.asarray(sorted(in_set), dtype=np.int64)
        lap = SparseMatrix.from_coo(graph.num_nodes, graph.num_nodes, r_idx, c_idx, vals)
        yield PlanLayer(lap, in_nodes, np.asarray(out_nodes, dtype=np.int64)), prob


def _layerwise_layer_outcomes(graph, upper, s, dependent):
    p = _layer_probabilities(graph, upper, dependent)
    m = min(s, int(np.count_nonzero(p)))
    for key, prob in _sequential_set_probs(p, m).items():
        drawn = np.asarray(key, dtype=np.int64)
        weight = np.zeros(graph.num_nodes)
        weight[drawn] = 1.0 / (m * p[drawn])
        lap = _restricted(graph.laplacian, upper, col_weight=weight)
        yield PlanLayer(lap, drawn, np.asarray(upper, dtype=np.int64)), prob


def enumerate_plans(graph: GraphDataset, config: SamplerConfig, batch, n_layers: int):
    """All (plan, probability) outcomes of a sampler on small inputs.

    Guarded by :data:`ENUMERATION_LIMIT`. For the subgraph strategy the
    distribution is conditioned on a nonempty training intersection
    (mirroring the resample-on-empty rule) and renormalized.
    """
    config.validate()
    if config.strategy == "exact":
        return [(sample_exact(graph, batch, n_layers), 1.0)]

    if config.strategy == "subgraph":
        p = _layer_probabilities(graph, None, dependent=False)
        m = min(config.samples_per_layer, int(np.count_nonzero(p)))
        outcomes = []
        kept_mass = 0.0
        for key, prob in _sequential_set_probs(p, m).items():
            drawn = np.asarray(key, dtype=np.int64)
            loss_batch = drawn[np.isin(drawn, graph.train_nodes)]
            if len(loss_batch) == 0:
                continue
            kept_mass += prob
            weight = np.zeros(graph.num_nodes)
            weight[drawn] = 1.0 / (m * p[drawn])
            lap = _restricted(graph.laplacian, drawn, col_weight=weight)
            outcomes.append((LayerPlan(loss_batch, [PlanLayer(lap, drawn, drawn)] * n_layers), prob))
        if not outcomes:
            raise SamplerDegenerateError("every subgraph outcome misses the training mask")
        return [(plan, prob / kept_mass) for plan, prob in outcomes]

    batch = _check_batch(graph, batch)

    def layer_outcomes(upper):
        if config.strategy == "nodewise":
            return _nodewise_layer_outcomes(graph, upper, config.neighbors_per_node)
        dependent = config.strategy == "ladies"
        return _layerwise_layer_outcomes(graph, upper, config.samples_per_layer, dependent)

    results = []

    def rec(upper, remaining, stack, prob):
        if remaining == 0:
            results.append((LayerPlan(batch, list(reversed(stack))), prob))
            _guard(len(results))
            return
        for layer, q in layer_outcomes(upper):
            rec(layer.input_nodes, remaining - 1, stack + [layer], prob * q)

    rec(batch, n_layers, [], 1.0)
    return results


def propagation_matrix(
    graph: GraphDataset,
    config: SamplerConfig,
    batch,
    layer: int,
    method="enumerate",
    n_draws=0,
    rng=None,
    n_layers=None,
) -> SparseMatrix:
    """Row-conditional expectation of the sampled Laplacian at ``layer``
    (1-based): E[sampled_L[i, j] | node i has a populated row].

    ``enumerate`` averages the exact outcome distribution; ``monte_carlo``
    averages ``n_draws`` sampled plans. Rows that are never populated
    stay empty.
    """
    if n_layers is None:
        n_layers = layer
    if not (1 <= layer <= n_layers):
        raise ConfigError(f"layer must be in [1, {n_layers}]")
    n = graph.num_nodes
    acc = np.zeros((n, n))
    presence = np.zeros(n)
    if method == "enumerate":
        outcomes = enumerate_plans(graph, config, batch, n_layers)
    elif method == "monte_carlo":
        if n_draws < 1:
            raise ConfigError("monte_carlo needs n_draws >= 1")
        if rng is None:
            rng = np.random.default_rng(config.seed)
        outcomes = ((sample_plan(graph, config, batch, n_layers, rng), 1.0 / n_draws) for _ in range(n_draws))
    else:
        raise ConfigError(f"unknown method {method!r}")
    for plan, prob in outcomes:
        plan_layer = plan.layers[layer - 1]
        presence[plan_layer.output_nodes] += prob
        lap = plan_layer.laplacian
        for i in plan_layer.output_nodes:
            cols, vals = lap.row_slice(i)
            acc[i, cols] += prob * vals
    rows, cols = np.nonzero(acc)
    vals = acc[rows, cols] / presence[rows]
    return SparseMatrix.from_coo(n, n, rows, cols, vals)
