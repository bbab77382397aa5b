"""Historical-state machinery for variance-reduced GCN training.

A :class:`HistoricalStore` persists per-layer pre-activations (and, in
doubly mode, per-layer embedding/weight gradients) across iterations.

* A *snapshot step* recomputes everything from scratch -- either with
  the full Laplacian over all training nodes, or on a large uniformly
  drawn node batch with all neighbors -- overwrites the store, records
  reference norms, and yields an (approximately) exact gradient.
* A *regular step* corrects the stored state along a sampled plan:

      Z_t = Z_{t-1} + sampled_L @ H_t @ W_t - sampled_L @ H_{t-1} @ W_{t-1}

  and, in doubly mode, applies the matching control-variate correction
  to the stored layerwise gradients:

      G_t = G_{t-1} + U_t.T @ M_t - U_{t-1}.T @ M_{t-1}
      D_t = D_{t-1} + L.T @ M_t @ W_t.T - L.T @ M_{t-1} @ W_{t-1}.T

  with U = sampled_L @ H and M = D_next * act'(Z). Both time slices of
  every touched row are kept on the step cache so the corrections use
  genuine previous-state data.

Norm ratios against the snapshot state implement the early-stop rule:
when the current embedding (or gradient) norm exceeds alpha (beta)
times its snapshot reference at any layer, the caller must run a fresh
snapshot at the current parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .graphs import GraphDataset
from .matrices import spmm, spmm_transposed
from .model import (
    ForwardCache,
    GradientSet,
    ModelParams,
    activation_apply,
    activation_derivative,
    backward_full,
    backward_sampled,
    forward_full,
    forward_sampled,
    loss_and_output_grad,
)
from .sampling import LayerPlan, sample_exact

logger = logging.getLogger(__name__)


@dataclass
class SnapshotConfig:
    """How snapshot steps obtain their gradient."""

    mode: str = "full_batch"  # or "large_batch"
    size: int = 0  # large-batch node count B'
    gap: int = 10
    alpha: float = 1.1
    beta: float = 1.1
    gap_growth: float = 0.0  # optional linear growth per completed snapshot

    def validate(self) -> "SnapshotConfig":
        if self.mode not in ("full_batch", "large_batch"):
            raise ConfigError(f"unknown snapshot mode {self.mode!r}")
        if self.mode == "large_batch" and self.size < 2:
            raise ConfigError("large-batch snapshots need size >= 2")
        if self.gap < 1:
            raise ConfigError("snapshot gap must be >= 1")
        if self.alpha < 1.0 or self.beta < 1.0:
            raise ConfigError("staleness factors must be >= 1")
        return self


@dataclass
class HistoricalStore:
    z_store: list  # per-layer (N, d_l) pre-activations
    d_store: list  # per-layer (N, d_{l-1}) embedding gradients (doubly mode)
    g_store: list  # per-layer (d_{l-1}, d_l) weight gradients (doubly mode)
    snapshot_z_norms: list
    snapshot_d_norms: list
    snapshot_gap: int
    alpha: float
    beta: float
    track_gradients: bool
    last_snapshot_iter: int = 0
    snapshot_count: int = 0
    snapshot_pool: np.ndarray | None = None  # large-batch node pool, if any
    gap_growth: float = 0.0

    @property
    def n_layers(self) -> int:
        return len(self.z_store)

    def current_gap(self) -> int:
        if self.snapshot_count == 0:
            return 1
        return max(1, int(round(self.snapshot_gap + self.gap_growth * (self.snapshot_count - 1))))

    def snapshot_due(self, iteration: int) -> bool:
        return self.snapshot_count == 0 or (iteration - self.last_snapshot_iter) >= self.current_gap()


def init_store(graph: GraphDataset, params: ModelParams, snapshot: SnapshotConfig, track_gradients: bool) -> HistoricalStore:
    snapshot.validate()
    n = graph.num_nodes
    dims = params.dims()
    return HistoricalStore(
        z_store=[np.zeros((n, dims[l + 1])) for l in range(params.n_layers)],
        d_store=[np.zeros((n, dims[l])) for l in range(params.n_layers)],
        g_store=[np.zeros((dims[l], dims[l + 1])) for l in range(params.n_layers)],
        snapshot_z_norms=[0.0] * params.n_layers,
        snapshot_d_norms=[0.0] * params.n_layers,
        snapshot_gap=snapshot.gap,
        alpha=snapshot.alpha,
        beta=snapshot.beta,
        track_gradients=track_gradients,
        gap_growth=snapshot.gap_growth,
    )


def _record_snapshot(store: HistoricalStore, cache: ForwardCache, grads: GradientSet, iteration: int, pool=None):
    for l in range(store.n_layers):
        store.z_store[l] = cache.pre_activations[l].copy()
        store.snapshot_z_norms[l] = float(np.linalg.norm(cache.activations[l]))
        if store.track_gradients:
            store.d_store[l] = grads.embed_grads[l].copy()
            store.g_store[l] = grads.weight_grads[l].copy()
            store.snapshot_d_norms[l] = float(np.linalg.norm(grads.embed_grads[l]))
    store.last_snapshot_iter = iteration
    store.snapshot_count += 1
    store.snapshot_pool = None if pool is None else np.asarray(pool, dtype=np.int64)


def snapshot_full(graph: GraphDataset, params: ModelParams, store: HistoricalStore, iteration: int):
    """Full-Laplacian snapshot over all training nodes; overwrites the
    store and returns the exact loss and gradient."""
    cache = forward_full(graph, params)
    loss, out_grad = loss_and_output_grad(cache, graph.labels, graph.train_nodes, params.loss)
    grads = backward_full(graph, cache, out_grad, params)
    _record_snapshot(store, cache, grads, iteration)
    return loss, grads


def large_batch_gradient(graph: GraphDataset, params: ModelParams, nodes):
    """Gradient of the mean loss over ``nodes`` with all-neighbor
    (exact) sampling; the deterministic core of a large-batch snapshot."""
    plan = sample_exact(graph, nodes, params.n_layers)
    cache = forward_sampled(graph, params, plan)
    loss, out_grad = loss_and_output_grad(cache, graph.labels, plan.batch, params.loss)
    grads = backward_sampled(plan, cache, out_grad, params)
    return loss, grads, cache


def snapshot_large_batch(graph: GraphDataset, params: ModelParams, store: HistoricalStore, b_prime: int, rng, iteration: int):
    """Approximate snapshot on a uniform large batch of training nodes.

    Regular-step mini-batches must subsequently be drawn from the
    recorded pool until the next snapshot.
    """
    pool = graph.train_nodes
    if b_prime < 2:
        raise ConfigError("large-batch snapshots need size >= 2")
    if b_prime > len(pool):
        logger.warning("large-batch size %d exceeds %d training nodes; clamping", b_prime, len(pool))
        b_prime = len(pool)
    subset = np.sort(rng.choice(pool, size=b_prime, replace=False))
    loss, grads, cache = large_batch_gradient(graph, params, subset)
    _record_snapshot(store, cache, grads, iteration, pool=subset)
    return loss, grads


@dataclass
class VrStepCache:
    """Both time slices of one regular step's touched state."""

    forward: ForwardCache  # time-t state (full-size copies)
    prev_pre_rows: list = field(default_factory=list)  # per-layer pre-update Z rows
    prev_propagated: list = field(default_factory=list)  # per-layer U_{t-1}


def forward_plus(graph: GraphDataset, params_t: ModelParams, params_prev: ModelParams, plan: LayerPlan, store: HistoricalStore) -> VrStepCache:
    """Regular-step forward correction; commits the new pre-activations
    into the store and returns both time slices for the backward pass.

    ``params_prev`` must be the parameters under which the store state
    was last written (snapshot or previous regular step).
    """
    if store.snapshot_count == 0:
        raise StateError("historical store has no snapshot; run a snapshot step first")
    if plan.n_layers != store.n_layers:
        raise ShapeError("plan depth does not match the historical store")
    act = params_t.activation
    prev_pre_rows, propagated, prev_propagated = [], [], []
    for l, layer in enumerate(plan.layers):
        rows_out = layer.output_nodes
        prev_pre_rows.append(store.z_store[l][rows_out].copy())
        if l == 0:
            # layer input is X at both time slices
            u_t = spmm(layer.laplacian, graph.features)
            u_prev = u_t
        else:
            h_t = activation_apply(act, store.z_store[l - 1])
            h_prev = h_t.copy()
            lower_rows = plan.layers[l - 1].output_nodes
            h_prev[lower_rows] = activation_apply(act, prev_pre_rows[l - 1])
            u_t = spmm(layer.laplacian, h_t)
            u_prev = spmm(layer.laplacian, h_prev)
        delta = u_t @ params_t.layers[l] - u_prev @ params_prev.layers[l]
        store.z_store[l][rows_out] += delta[rows_out]
        propagated.append(u_t)
        prev_propagated.append(u_prev)
    pre = [z.copy() for z in store.z_store]
    cache = ForwardCache(pre, [activation_apply(act, z) for z in pre], propagated, graph.features)
    return VrStepCache(cache, prev_pre_rows, prev_propagated)


def previous_output_grad(vr_cache: VrStepCache, plan: LayerPlan, labels, batch, params_prev: ModelParams):
    """Loss gradient w.r.t. the top-layer embeddings evaluated on the
    pre-update state, on the same batch rows as the current step."""
    top = len(plan.layers) - 1
    h_prev = vr_cache.forward.activations[top].copy()
    rows = plan.layers[top].output_nodes
    h_prev[rows] = activation_apply(params_prev.activation, vr_cache.prev_pre_rows[top])
    stub = ForwardCache([], [h_prev], [], vr_cache.forward.h0)
    return loss_and_output_grad(stub, labels, batch, params_prev.loss)


def backward_plus(plan: LayerPlan, vr_cache: VrStepCache, output_grad, params_t: ModelParams) -> GradientSet:
    """Zeroth-order regular-step gradient: the plain sampled backward
    recursion evaluated on the corrected forward state."""
    return backward_sampled(plan, vr_cache.forward, output_grad, params_t)


def backward_plusplus(
    plan: LayerPlan,
    vr_cache: VrStepCache,
    output_grad_t,
    output_grad_prev,
    params_t: ModelParams,
    params_prev: ModelParams,
    store: HistoricalStore,
) -> GradientSet:
    """Doubly variance-reduced backward step.

    Applies the historical-gradient control-variate recursion layer by
    layer (top down), commits the updated gradient stores, and returns
    the gradient the optimizer should consume.
    """
    if store.snapshot_count == 0 or not store.track_gradients:
        raise StateError("doubly variance reduction needs a gradient-tracking snapshot")
    if plan.n_layers != store.n_layers:
        raise ShapeError("plan depth does not match the historical store")
    act = params_t.activation
    n_layers = store.n_layers
    new_g = [None] * n_layers
    new_d = [None] * n_layers
    d_next_t = output_grad_t
    d_next_prev = output_grad_prev
    for l in range(n_layers - 1, -1, -1):
        layer = plan.layers[l]
        sig_t = activation_derivative(act, vr_cache.forward.pre_activations[l])
        sig_prev = sig_t.copy()
        sig_prev[layer.output_nodes] = activation_derivative(act, vr_cache.prev_pre_rows[l])
        m_t = d_next_t * sig_t
        m_prev = d_next_prev * sig_prev
        new_g[l] = (
            store.g_store[l]
            + vr_cache.forward.propagated[l].T @ m_t
            - vr_cache.prev_propagated[l].T @ m_prev
        )
        lap = layer.laplacian
        correction = spmm_transposed(lap, m_t) @ params_t.layers[l].T - spmm_transposed(lap, m_prev) @ params_prev.layers[l].T
        d_prev = store.d_store[l]
        d_new = d_prev.copy()
        d_new[layer.input_nodes] += correction[layer.input_nodes]
        new_d[l] = d_new
        d_next_t = d_new
        d_next_prev = d_prev
    for l in range(n_layers):
        store.g_store[l] = new_g[l]
        store.d_store[l] = new_d[l]
    return GradientSet([g.copy() for g in new_g], [d.copy() for d in new_d], output_grad_t)


def current_store_norms(store: HistoricalStore, activation: str):
    """Frobenius norms of the store's embedding state (act(Z) per layer)
    and, when tracked, of its gradient state."""
    z_norms = [float(np.linalg.norm(activation_apply(activation, z))) for z in store.z_store]
    d_norms = [float(np.linalg.norm(d)) for d in store.d_store] if store.track_gradients else None
    return z_norms, d_norms


def early_stop_check(store: HistoricalStore, current_z_norms, current_d_norms, mode: str) -> bool:
    """True when the drift from the snapshot state demands a fresh
    snapshot now (norm ratio >= alpha for embeddings at any layer, or
    >= beta for gradients in doubly mode)."""
    if mode not in ("zeroth", "doubly"):
        raise ConfigError(f"unknown variance-reduction mode {mode!r}")
    for cur, ref in zip(current_z_norms, store.snapshot_z_norms):
        if cur >= store.alpha * ref:
            return True
    if mode == "doubly":
        if current_d_norms is None:
            raise StateError("doubly-mode early stop needs current gradient norms")
        for cur, ref in zip(current_d_norms, store.snapshot_d_norms):
            if cur >= store.beta * ref:
                return True
    return False
