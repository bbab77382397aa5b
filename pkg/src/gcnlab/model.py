"""The L-layer GCN: parameters, activations, losses, and the explicit
forward/backward matrix recursions for full-batch and sampled execution.

Backpropagation is written out by hand. For every layer, with U = L @ H
denoting the propagated input,

    Z = U @ W,  H = act(Z)                       (forward)
    G = U.T @ (D_next * act'(Z))                 (weight gradient)
    D = L.T @ (D_next * act'(Z)) @ W.T           (input-embedding gradient)

where D_next for the top layer is the loss gradient w.r.t. the output
embeddings, nonzero only on the loss batch rows. All per-layer matrices
are kept at full node count with zero rows for nodes outside a layer's
node set; wasteful at scale but simple and exact at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LabelError, ShapeError
from .graphs import GraphDataset
from .matrices import spmm, spmm_transposed
from .sampling import LayerPlan

ACTIVATIONS = ("relu", "elu", "identity")
LOSSES = ("softmax_ce", "sigmoid_bce")


@dataclass
class ModelParams:
    """Per-layer weight matrices plus activation and loss choice."""

    layers: list  # list of (d_in, d_out) float64 arrays
    activation: str
    loss: str

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def dims(self):
        return [self.layers[0].shape[0]] + [w.shape[1] for w in self.layers]

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.layers], self.activation, self.loss)


@dataclass
class ForwardCache:
    """Per-layer forward state: Z (pre-activation), H = act(Z), and the
    propagated input U = L @ H_prev reused by the backward pass."""

    pre_activations: list
    activations: list
    propagated: list
    h0: np.ndarray


@dataclass
class GradientSet:
    """Per-layer weight gradients, input-embedding gradients, and the
    loss gradient w.r.t. the output embeddings."""

    weight_grads: list
    embed_grads: list
    output_grad: np.ndarray

    def copy(self) -> "GradientSet":
        return GradientSet(
            [g.copy() for g in self.weight_grads],
            [d.copy() for d in self.embed_grads],
            self.output_grad.copy(),
        )


def activation_apply(kind: str, z):
    z = np.asarray(z, dtype=np.float64)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    if kind == "identity":
        return z.copy()
    raise ConfigError(f"unknown activation {kind!r}")


def activation_derivative(kind: str, z):
    z = np.asarray(z, dtype=np.float64)
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "elu":
        # derivative at exactly z = 0 is defined as 1 (right limit)
        return np.where(z >= 0, 1.0, np.exp(np.minimum(z, 0.0)))
    if kind == "identity":
        return np.ones_like(z)
    raise ConfigError(f"unknown activation {kind!r}")


def init_params(dims, activation="elu", loss="softmax_ce", seed=0) -> ModelParams:
    """Glorot-uniform weights, bound sqrt(6 / (d_in + d_out)); no biases."""
    if len(dims) < 2:
        raise ShapeError("need at least one layer (two dims)")
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    if loss not in LOSSES:
        raise ConfigError(f"unknown loss {loss!r}")
    rng = np.random.default_rng(seed)
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (d_in + d_out))
        layers.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
    return ModelParams(layers, activation, loss)


def forward_full(graph: GraphDataset, params: ModelParams) -> ForwardCache:
    """Full-batch forward pass: Z_l = L @ H_{l-1} @ W_l, H_l = act(Z_l)."""
    if graph.num_features != params.layers[0].shape[0]:
        raise ShapeError("feature width does not match first layer input dim")
    h = graph.features
    pre, act, prop = [], [], []
    for w in params.layers:
        u = spmm(graph.laplacian, h)
        z = u @ w
        h = activation_apply(params.activation, z)
        prop.append(u)
        pre.append(z)
        act.append(h)
    return ForwardCache(pre, act, prop, graph.features)


def forward_sampled(graph: GraphDataset, params: ModelParams, plan: LayerPlan) -> ForwardCache:
    """Forward pass along a sampling plan's per-layer sparse Laplacians.

    Only rows in each layer's output node set are populated; everything
    else stays zero.
    """
    if plan.n_layers != params.n_layers:
        raise ShapeError(f"plan has {plan.n_layers} layers, model has {params.n_layers}")
    if plan.num_nodes != graph.num_nodes:
        raise ShapeError("plan node count does not match graph")
    h = graph.features
    pre, act, prop = [], [], []
    for layer, w in zip(plan.layers, params.layers):
        u = spmm(layer.laplacian, h)
        z = u @ w
        h = activation_apply(params.activation, z)
        # activation of a zero row may be nonzero only through act(0) != 0,
        # which does not occur for relu/elu/identity; keep rows exact anyway
        prop.append(u)
        pre.append(z)
        act.append(h)
    return ForwardCache(pre, act, prop, graph.features)


def loss_and_output_grad(cache: ForwardCache, labels, batch, loss: str):
    """Mean loss over ``batch`` and its gradient w.r.t. the output
    embeddings (rows outside the batch are zero)."""
    batch = np.asarray(batch, dtype=np.int64)
    if len(batch) == 0:
        raise ConfigError("loss batch is empty")
    h_out = cache.activations[-1]
    out = h_out[batch]
    b = len(batch)
    grad = np.zeros_like(h_out)
    if loss == "softmax_ce":
        y = np.asarray(labels, dtype=np.int64)[batch]
        if y.min() < 0 or y.max() >= out.shape[1]:
            raise LabelError(f"class index outside [0, {out.shape[1]})")
        shifted = out - out.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        value = float(np.mean(log_z - shifted[np.arange(b), y]))
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        probs[np.arange(b), y] -= 1.0
        grad[batch] = probs / b
    elif loss == "sigmoid_bce":
        y = np.asarray(labels, dtype=np.float64)[batch]
        if y.shape != out.shape:
            raise LabelError("multi-label matrix shape does not match outputs")
        # loss per entry: y*softplus(-z) + (1-y)*softplus(z), summed per node
        value = float(np.mean(np.sum(y * np.logaddexp(0.0, -out) + (1 - y) * np.logaddexp(0.0, out), axis=1)))
        sig = 1.0 / (1.0 + np.exp(-out))
        grad[batch] = (sig - y) / b
    else:
        raise ConfigError(f"unknown loss {loss!r}")
    return value, grad


def _backward(lap_per_layer, cache: ForwardCache, output_grad, params: ModelParams) -> GradientSet:
    """Shared backward recursion; ``lap_per_layer[l]`` is the operator
    used at layer l (full Laplacian repeated, or the plan's matrices)."""
    n_layers = params.n_layers
    if output_grad.shape != cache.activations[-1].shape:
        raise ShapeError("output gradient shape does not match top-layer activations")
    weight_grads = [None] * n_layers
    embed_grads = [None] * n_layers
    d_next = output_grad
    for l in range(n_layers - 1, -1, -1):
        masked = d_next * activation_derivative(params.activation, cache.pre_activations[l])
        weight_grads[l] = cache.propagated[l].T @ masked
        d_next = spmm_transposed(lap_per_layer[l], masked) @ params.layers[l].T
        embed_grads[l] = d_next
    return GradientSet(weight_grads, embed_grads, output_grad)


def backward_full(graph: GraphDataset, cache: ForwardCache, output_grad, params: ModelParams) -> GradientSet:
    return _backward([graph.laplacian] * params.n_layers, cache, output_grad, params)


def backward_sampled(plan: LayerPlan, cache: ForwardCache, output_grad, params: ModelParams) -> GradientSet:
    if plan.n_layers != params.n_layers:
        raise ShapeError(f"plan has {plan.n_layers} layers, model has {params.n_layers}")
    if len(cache.pre_activations) != params.n_layers:
        raise ShapeError("cache does not match model depth")
    return _backward([layer.laplacian for layer in plan.layers], cache, output_grad, params)


def full_gradient(graph: GraphDataset, params: ModelParams, nodes=None):
    """Loss and gradient of the full (all-neighbor) objective over
    ``nodes`` (default: the training mask)."""
    if nodes is None:
        nodes = graph.train_nodes
    cache = forward_full(graph, params)
    value, grad = loss_and_output_grad(cache, graph.labels, nodes, params.loss)
    return value, backward_full(graph, cache, grad, params)
