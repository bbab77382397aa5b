"""Measurement instruments: gradient mean-square error against the full
gradient, its bias/variance decomposition, and the finite-difference
gradient oracle shared by the test suite.

The decomposition always conditions on the full gradient at the
*current* parameters. Exhaustive enumeration is exact (zero reported
standard error) and is gated by the sampler enumeration limit; Monte
Carlo reports the sample standard error of its MSE estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .graphs import GraphDataset
from .model import (
    GradientSet,
    ModelParams,
    backward_sampled,
    forward_full,
    forward_sampled,
    full_gradient,
    loss_and_output_grad,
)
from .sampling import LayerPlan, SamplerConfig, enumerate_plans, sample_plan


@dataclass
class RunRecord:
    """One training iteration's metrics; None marks "not measured"."""

    iteration: int
    epoch: int
    train_loss: float
    val_loss: float | None = None
    grad_mse: float | None = None
    bias_sq: float | None = None
    variance: float | None = None
    grad_norm: float | None = None
    f1_val: float | None = None
    snapshot_flag: bool = False
    wall_ms: float = 0.0


@dataclass
class Decomposition:
    mse: float
    bias_sq: float
    variance: float
    stderr: float


def grad_mse(stoch: GradientSet, full: GradientSet) -> float:
    """Sum over layers of the squared Frobenius distance between the
    two weight-gradient sets."""
    if len(stoch.weight_grads) != len(full.weight_grads):
        raise ShapeError("gradient sets have different layer counts")
    total = 0.0
    for a, b in zip(stoch.weight_grads, full.weight_grads):
        if a.shape != b.shape:
            raise ShapeError(f"gradient shape mismatch: {a.shape} vs {b.shape}")
        total += float(np.sum((a - b) ** 2))
    return total


def grad_frobenius_norm(grads: GradientSet) -> float:
    return float(np.sqrt(sum(np.sum(g**2) for g in grads.weight_grads)))


def _flatten(grads: GradientSet) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads.weight_grads])


def _stochastic_gradient(graph, params, plan: LayerPlan) -> np.ndarray:
    cache = forward_sampled(graph, params, plan)
    _, out_grad = loss_and_output_grad(cache, graph.labels, plan.batch, params.loss)
    return _flatten(backward_sampled(plan, cache, out_grad, params))


def bias_variance_decompose(
    graph: GraphDataset,
    params: ModelParams,
    config: SamplerConfig,
    batch_law,
    n_draws: int = 0,
    rng=None,
    method: str = "monte_carlo",
) -> Decomposition:
    """Decompose the stochastic gradient's error against the full
    gradient at the current parameters.

    ``batch_law`` is ("fixed", node_indices) or ("uniform", batch_size);
    the subgraph strategy determines its own batch and ignores it.
    ``enumerate`` requires a fixed batch and walks the exact plan
    distribution; ``monte_carlo`` averages ``n_draws`` independent
    (batch, plan) draws.
    """
    kind, arg = batch_law
    if kind not in ("fixed", "uniform"):
        raise ConfigError(f"unknown batch law {kind!r}")
    _, full = full_gradient(graph, params)
    g_full = _flatten(full)
    n_layers = params.n_layers

    if method == "enumerate":
        if kind != "fixed" and config.strategy != "subgraph":
            raise ConfigError("enumeration requires a fixed batch")
        batch = None if config.strategy == "subgraph" else np.asarray(arg, dtype=np.int64)
        outcomes = enumerate_plans(graph, config, batch, n_layers)
        mean = np.zeros_like(g_full)
        mse = 0.0
        draws = []
        for plan, prob in outcomes:
            g_hat = _stochastic_gradient(graph, params, plan)
            draws.append((g_hat, prob))
            mean += prob * g_hat
            mse += prob * float(np.sum((g_hat - g_full) ** 2))
        bias_sq = float(np.sum((mean - g_full) ** 2))
        variance = sum(prob * float(np.sum((g_hat - mean) ** 2)) for g_hat, prob in draws)
        return Decomposition(mse, bias_sq, variance, 0.0)

    if method != "monte_carlo":
        raise ConfigError(f"unknown method {method!r}")
    if n_draws < 2:
        raise ConfigError("monte_carlo needs n_draws >= 2")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    samples = np.empty((n_draws, len(g_full)))
    for k in range(n_draws):
        if config.strategy == "subgraph":
            batch = None
        elif kind == "fixed":
            batch = np.asarray(arg, dtype=np.int64)
        else:
            batch = np.sort(rng.choice(graph.train_nodes, size=min(int(arg), len(graph.train_nodes)), replace=False))
        plan = sample_plan(graph, config, batch, n_layers, rng)
        samples[k] = _stochastic_gradient(graph, params, plan)
    sq_err = np.sum((samples - g_full) ** 2, axis=1)
    mse = float(np.mean(sq_err))
    mean = samples.mean(axis=0)
    bias_sq = float(np.sum((mean - g_full) ** 2))
    variance = float(np.sum((samples - mean) ** 2) / (n_draws - 1))
    stderr = float(np.std(sq_err, ddof=1) / np.sqrt(n_draws))
    return Decomposition(mse, bias_sq, variance, stderr)


def finite_difference_gradient(
    graph: GraphDataset,
    params: ModelParams,
    batch,
    plan: LayerPlan | None = None,
    step: float = 1e-6,
) -> GradientSet:
    """Central-difference gradient of the (sampled or full) loss with
    respect to every weight entry, holding the plan fixed.

    Only the weight gradients are populated.
    """
    if step <= 0:
        raise ConfigError("finite-difference step must be positive")

    def loss_at(p: ModelParams) -> float:
        cache = forward_full(graph, p) if plan is None else forward_sampled(graph, p, plan)
        value, _ = loss_and_output_grad(cache, graph.labels, batch, p.loss)
        return value

    grads = []
    work = params.copy()
    for l, w in enumerate(params.layers):
        g = np.zeros_like(w)
        for i in range(w.shape[0]):
            for j in range(w.shape[1]):
                orig = work.layers[l][i, j]
                work.layers[l][i, j] = orig + step
                up = loss_at(work)
                work.layers[l][i, j] = orig - step
                down = loss_at(work)
                work.layers[l][i, j] = orig
                g[i, j] = (up - down) / (2.0 * step)
        grads.append(g)
    top_shape = ((graph.num_nodes, params.layers[-1].shape[1]))
    return GradientSet(grads, [], np.zeros(top_shape))
