"""Optimizers and the end-to-end training loops.

Three loops share one iteration budget convention: iterations are
1-based, ``T = epochs * iters_per_epoch``, and every iteration emits one
:class:`~gcnlab.analysis.RunRecord` to the sink. Snapshot steps count as
iterations and perform a parameter update with the snapshot gradient.

Randomness is split per (iteration, purpose) from the master seed, so
metric streams are bit-reproducible for a fixed config and seed and do
not depend on which purposes consume randomness in a given iteration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import RunRecord, bias_variance_decompose, grad_frobenius_norm, grad_mse
from .errors import ConfigError, SamplerDegenerateError, ShapeError
from .graphs import GraphDataset
from .model import (
    ModelParams,
    forward_full,
    forward_sampled,
    full_gradient,
    loss_and_output_grad,
    backward_sampled,
)
from .sampling import SamplerConfig, sample_plan
from .variance_reduction import (
    HistoricalStore,
    SnapshotConfig,
    backward_plus,
    backward_plusplus,
    current_store_norms,
    early_stop_check,
    forward_plus,
    init_store,
    previous_output_grad,
    snapshot_full,
    snapshot_large_batch,
)

VR_MODES = ("none", "zeroth", "doubly")

# purpose codes for per-iteration random streams
_RNG_BATCH, _RNG_PLAN, _RNG_SNAPSHOT, _RNG_MEASURE = 0, 1, 2, 3


@dataclass
class OptimizerState:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_optimizer(kind: str, lr: float, params: ModelParams) -> OptimizerState:
    if kind not in ("sgd", "adam"):
        raise ConfigError(f"unknown optimizer {kind!r}")
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    state = OptimizerState(kind, lr)
    if kind == "adam":
        state.m = [np.zeros_like(w) for w in params.layers]
        state.v = [np.zeros_like(w) for w in params.layers]
    return state


def sgd_step(params: ModelParams, grads, lr: float) -> ModelParams:
    new_layers = []
    for w, g in zip(params.layers, grads.weight_grads):
        if w.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match weights {w.shape}")
        new_layers.append(w - lr * g)
    return ModelParams(new_layers, params.activation, params.loss)


def adam_step(params: ModelParams, grads, state: OptimizerState):
    """Standard Adam with bias correction; mutates and returns the state."""
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_layers = []
    for l, (w, g) in enumerate(zip(params.layers, grads.weight_grads)):
        if w.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match weights {w.shape}")
        state.m[l] = state.beta1 * state.m[l] + (1.0 - state.beta1) * g
        state.v[l] = state.beta2 * state.v[l] + (1.0 - state.beta2) * g**2
        m_hat = state.m[l] / c1
        v_hat = state.v[l] / c2
        new_layers.append(w - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return ModelParams(new_layers, params.activation, params.loss), state


def optimizer_step(params: ModelParams, grads, state: OptimizerState) -> ModelParams:
    if state.kind == "sgd":
        return sgd_step(params, grads, state.lr)
    params, _ = adam_step(params, grads, state)
    return params


@dataclass
class TrainConfig:
    sampler: SamplerConfig
    vr_mode: str = "none"
    snapshot: SnapshotConfig = field(default_factory=SnapshotConfig)
    batch_size: int = 512
    epochs: int = 1
    iters_per_epoch: int = 0  # 0 means ceil(n_train / batch_size)
    seed: int = 0
    eval_every: int = 1
    optimizer: str = "adam"
    lr: float = 0.01
    measure_mse: str = "off"  # off | every:<k> | draws:<n>

    def validate(self) -> "TrainConfig":
        self.sampler.validate()
        if self.vr_mode not in VR_MODES:
            raise ConfigError(f"unknown vr mode {self.vr_mode!r}")
        if self.vr_mode != "none":
            self.snapshot.validate()
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        parse_measure_mse(self.measure_mse)
        return self


def parse_measure_mse(spec: str):
    """'off', 'every:<k>' (per-step gradient error every k iterations),
    or 'draws:<n>' (per-iteration Monte-Carlo decomposition)."""
    if spec == "off":
        return ("off", 0)
    for prefix in ("every", "draws"):
        if spec.startswith(prefix + ":"):
            try:
                value = int(spec.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad measure-mse value in {spec!r}") from None
            if value < 1 or (prefix == "draws" and value < 2):
                raise ConfigError(f"measure-mse count out of range in {spec!r}")
            return (prefix, value)
    raise ConfigError(f"measure-mse must be off, every:<k>, or draws:<n>, got {spec!r}")


def _iteration_rng(seed: int, iteration: int, purpose: int):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(iteration, purpose)))


def _iters_per_epoch(graph: GraphDataset, config: TrainConfig) -> int:
    if config.iters_per_epoch > 0:
        return config.iters_per_epoch
    b = min(config.batch_size, len(graph.train_nodes))
    return max(1, -(-len(graph.train_nodes) // b))


def _draw_batch(pool: np.ndarray, size: int, rng) -> np.ndarray:
    size = min(size, len(pool))
    return np.sort(rng.choice(pool, size=size, replace=False))


def _measure(graph, params, config: TrainConfig, grads_used, iteration):
    """Optional gradient-error metrics against the full gradient at the
    current parameters; returns a dict of RunRecord fields."""
    mode, value = parse_measure_mse(config.measure_mse)
    if mode == "off":
        return {}
    if mode == "every":
        if iteration % value != 0:
            return {}
        _, full = full_gradient(graph, params)
        return {"grad_mse": grad_mse(grads_used, full), "grad_norm": grad_frobenius_norm(full)}
    rng = _iteration_rng(config.seed, iteration, _RNG_MEASURE)
    dec = bias_variance_decompose(
        graph,
        params,
        config.sampler,
        ("uniform", config.batch_size),
        n_draws=value,
        rng=rng,
        method="monte_carlo",
    )
    _, full = full_gradient(graph, params)
    return {
        "grad_mse": dec.mse,
        "bias_sq": dec.bias_sq,
        "variance": dec.variance,
        "grad_norm": grad_frobenius_norm(full),
    }


def _evaluate_fields(graph, params, config, iteration):
    if config.eval_every < 1 or iteration % config.eval_every != 0:
        return {}
    if len(graph.val_nodes) == 0:
        return {}
    loss, score = evaluate(graph, params, "val")
    return {"val_loss": loss, "f1_val": score}


def evaluate(graph: GraphDataset, params: ModelParams, split: str):
    """Mean loss and score over a split (full forward over all nodes).

    Single-label score is micro accuracy with lowest-index argmax
    tie-break; multi-label is micro-F1 at probability threshold 0.5.
    """
    nodes = graph.mask(split)
    if len(nodes) == 0:
        raise ConfigError(f"split {split!r} is empty")
    cache = forward_full(graph, params)
    loss, _ = loss_and_output_grad(cache, graph.labels, nodes, params.loss)
    out = cache.activations[-1][nodes]
    if graph.multilabel:
        pred = out > 0.0  # sigmoid(h) > 0.5
        truth = graph.labels[nodes].astype(bool)
        tp = int(np.sum(pred & truth))
        fp = int(np.sum(pred & ~truth))
        fn = int(np.sum(~pred & truth))
        score = 1.0 if (2 * tp + fp + fn) == 0 else 2.0 * tp / (2 * tp + fp + fn)
    else:
        pred = np.argmax(out, axis=1)
        score = float(np.mean(pred == graph.labels[nodes]))
    return loss, score


def _emit(sink, record: RunRecord):
    if sink is not None:
        sink(record)


def train_sgcn(graph: GraphDataset, params: ModelParams, config: TrainConfig, sink=None) -> ModelParams:
    """Vanilla sampling-based training: sample, forward, backward, step."""
    config.validate()
    if config.vr_mode != "none":
        raise ConfigError("train_sgcn handles vr_mode='none' only")
    ipe = _iters_per_epoch(graph, config)
    total = config.epochs * ipe
    opt = init_optimizer(config.optimizer, config.lr, params)
    for t in range(1, total + 1):
        started = time.perf_counter()
        plan = _draw_plan(graph, config, params.n_layers, t)
        batch = plan.batch
        cache = forward_sampled(graph, params, plan)
        loss, out_grad = loss_and_output_grad(cache, graph.labels, batch, params.loss)
        grads = backward_sampled(plan, cache, out_grad, params)
        fields = _measure(graph, params, config, grads, t)
        params = optimizer_step(params, grads, opt)
        fields.update(_evaluate_fields(graph, params, config, t))
        _emit(sink, RunRecord(
            iteration=t,
            epoch=(t - 1) // ipe + 1,
            train_loss=loss,
            snapshot_flag=False,
            wall_ms=(time.perf_counter() - started) * 1e3,
            **fields,
        ))
    return params


def _draw_plan(graph, config: TrainConfig, n_layers, iteration, pool=None):
    """Batch + plan for one iteration; the subgraph strategy picks its
    own loss batch."""
    if config.sampler.strategy == "subgraph":
        plan = sample_plan(graph, config.sampler, None, n_layers, _iteration_rng(config.seed, iteration, _RNG_PLAN))
        if pool is not None:
            batch = plan.batch[np.isin(plan.batch, pool)]
            if len(batch) == 0:
                raise SamplerDegenerateError(
                    "subgraph batch misses the large-batch snapshot pool; use full_batch snapshots"
                )
            plan.batch = batch
        return plan
    batch_rng = _iteration_rng(config.seed, iteration, _RNG_BATCH)
    batch = _draw_batch(graph.train_nodes if pool is None else pool, config.batch_size, batch_rng)
    return sample_plan(graph, config.sampler, batch, n_layers, _iteration_rng(config.seed, iteration, _RNG_PLAN))


def train_sgcn_plus(graph: GraphDataset, params: ModelParams, config: TrainConfig, sink=None) -> ModelParams:
    if config.vr_mode != "zeroth":
        raise ConfigError("train_sgcn_plus requires vr_mode='zeroth'")
    return _train_variance_reduced(graph, params, config, sink, doubly=False)


def train_sgcn_plusplus(graph: GraphDataset, params: ModelParams, config: TrainConfig, sink=None) -> ModelParams:
    if config.vr_mode != "doubly":
        raise ConfigError("train_sgcn_plusplus requires vr_mode='doubly'")
    return _train_variance_reduced(graph, params, config, sink, doubly=True)


def _train_variance_reduced(graph, params, config: TrainConfig, sink, doubly: bool) -> ModelParams:
    config.validate()
    ipe = _iters_per_epoch(graph, config)
    total = config.epochs * ipe
    opt = init_optimizer(config.optimizer, config.lr, params)
    store = init_store(graph, params, config.snapshot, track_gradients=doubly)
    params_store = params  # parameters the store state was written under
    mode = "doubly" if doubly else "zeroth"

    def snapshot_step(t, current_params):
        if config.snapshot.mode == "full_batch":
            return snapshot_full(graph, current_params, store, t)
        rng = _iteration_rng(config.seed, t, _RNG_SNAPSHOT)
        return snapshot_large_batch(graph, current_params, store, config.snapshot.size, rng, t)

    for t in range(1, total + 1):
        started = time.perf_counter()
        run_snapshot = store.snapshot_due(t)
        loss = grads = None
        if not run_snapshot:
            pool = store.snapshot_pool
            plan = _draw_plan(graph, config, params.n_layers, t, pool=pool)
            batch = plan.batch
            vr_cache = forward_plus(graph, params, params_store, plan, store)
            z_norms, d_norms = current_store_norms(store, params.activation)
            if early_stop_check(store, z_norms, d_norms, mode):
                run_snapshot = True  # discard this step's gradient work; snapshot now
            else:
                loss, out_grad = loss_and_output_grad(vr_cache.forward, graph.labels, batch, params.loss)
                if doubly:
                    _, out_grad_prev = previous_output_grad(vr_cache, plan, graph.labels, batch, params_store)
                    grads = backward_plusplus(plan, vr_cache, out_grad, out_grad_prev, params, params_store, store)
                else:
                    grads = backward_plus(plan, vr_cache, out_grad, params)
        if run_snapshot:
            loss, grads = snapshot_step(t, params)
        fields = _measure(graph, params, config, grads, t)
        params_store = params
        params = optimizer_step(params, grads, opt)
        fields.update(_evaluate_fields(graph, params, config, t))
        _emit(sink, RunRecord(
            iteration=t,
            epoch=(t - 1) // ipe + 1,
            train_loss=loss,
            snapshot_flag=run_snapshot,
            wall_ms=(time.perf_counter() - started) * 1e3,
            **fields,
        ))
    return params


def train(graph: GraphDataset, params: ModelParams, config: TrainConfig, sink=None) -> ModelParams:
    """Dispatch to the loop matching ``config.vr_mode``."""
    if config.vr_mode == "none":
        return train_sgcn(graph, params, config, sink)
    if config.vr_mode == "zeroth":
        return train_sgcn_plus(graph, params, config, sink)
    if config.vr_mode == "doubly":
        return train_sgcn_plusplus(graph, params, config, sink)
    raise ConfigError(f"unknown vr mode {config.vr_mode!r}")
