"""Forward/backward recursions against dense reference pipelines and
central finite differences."""

import math

import numpy as np
import pytest

from gcnlab.analysis import finite_difference_gradient
from gcnlab.errors import ConfigError, LabelError, ShapeError
from gcnlab.graphs import GraphDataset
from gcnlab.matrices import identity_sparse
from gcnlab.model import (
    ForwardCache,
    ModelParams,
    activation_apply,
    activation_derivative,
    backward_full,
    backward_sampled,
    forward_full,
    forward_sampled,
    init_params,
    loss_and_output_grad,
)
from gcnlab.sampling import SamplerConfig, sample_exact, sample_plan

from conftest import build_graph, cycle_edges, max_rel_err, random_connected_edges, star4_edges


def identity_graph(n, features, labels=None, num_classes=2):
    """Graph whose Laplacian is the identity: layers reduce to X @ W."""
    return GraphDataset(
        laplacian=identity_sparse(n),
        features=np.asarray(features, dtype=np.float64),
        labels=np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels),
        train_nodes=np.arange(n),
        val_nodes=np.asarray([], dtype=np.int64),
        test_nodes=np.asarray([], dtype=np.int64),
        multilabel=False,
        num_classes=num_classes,
    )


class TestActivations:
    def test_relu(self):
        assert activation_apply("relu", -3.0) == 0.0
        assert activation_derivative("relu", -3.0) == 0.0
        assert activation_derivative("relu", 0.0) == 0.0  # 1{z > 0}
        assert activation_apply("relu", 2.5) == 2.5

    def test_elu_at_zero(self):
        assert activation_apply("elu", 0.0) == 0.0
        assert activation_derivative("elu", 0.0) == 1.0  # right limit

    def test_elu_closed_form_at_minus_one(self):
        assert abs(activation_apply("elu", -1.0) - (math.exp(-1) - 1.0)) < 1e-15
        assert abs(activation_derivative("elu", -1.0) - math.exp(-1)) < 1e-15

    def test_identity(self):
        z = np.array([-2.0, 0.0, 3.0])
        assert np.array_equal(activation_apply("identity", z), z)
        assert np.array_equal(activation_derivative("identity", z), np.ones(3))

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            activation_apply("tanh", 0.0)


class TestInitParams:
    def test_glorot_bound(self):
        params = init_params([4, 3], seed=0)
        bound = math.sqrt(6.0 / 7.0)
        assert np.abs(params.layers[0]).max() <= bound

    def test_same_seed_identical(self):
        a = init_params([4, 8, 3], seed=9)
        b = init_params([4, 8, 3], seed=9)
        assert all(np.array_equal(x, y) for x, y in zip(a.layers, b.layers))

    def test_two_layer_hidden_256_shapes(self):
        params = init_params([4, 256, 121], seed=0)
        assert [w.shape for w in params.layers] == [(4, 256), (256, 121)]

    def test_rejects_single_dim(self):
        with pytest.raises(ShapeError):
            init_params([4], seed=0)


class TestForward:
    def test_identity_one_layer(self):
        graph = identity_graph(3, np.eye(3))
        params = ModelParams([np.arange(9.0).reshape(3, 3)], "identity", "softmax_ce")
        cache = forward_full(graph, params)
        assert np.array_equal(cache.activations[0], params.layers[0])

    def test_relu_all_negative(self):
        graph = identity_graph(2, -np.ones((2, 2)))
        params = ModelParams([np.eye(2)], "relu", "softmax_ce")
        cache = forward_full(graph, params)
        assert np.abs(cache.activations[0]).max() == 0.0

    def test_triangle_against_dense_reference(self):
        graph = build_graph(3, [(0, 1), (1, 2), (0, 2)], feat_dim=2, seed=3)
        params = init_params([2, 4, 2], "elu", "softmax_ce", seed=1)
        cache = forward_full(graph, params)
        h = graph.features
        lap = graph.laplacian.to_dense()
        for l, w in enumerate(params.layers):
            z = lap @ h @ w
            h = activation_apply("elu", z)
            assert np.abs(cache.pre_activations[l] - z).max() < 1e-12
            assert np.abs(cache.activations[l] - h).max() < 1e-12

    def test_feature_width_mismatch(self):
        graph = identity_graph(2, np.ones((2, 3)))
        params = init_params([4, 2], seed=0)
        with pytest.raises(ShapeError):
            forward_full(graph, params)


class TestForwardSampled:
    def test_exact_plan_matches_full(self, sbm60):
        params = init_params([8, 5, 3], "elu", "softmax_ce", seed=2)
        plan = sample_exact(sbm60, sbm60.train_nodes, 2)
        full = forward_full(sbm60, params)
        sampled = forward_sampled(sbm60, params, plan)
        batch = sbm60.train_nodes
        assert np.abs(sampled.activations[-1][batch] - full.activations[-1][batch]).max() < 1e-12

    def test_unsampled_rows_stay_zero(self, star4):
        params = init_params([3, 2], "elu", "softmax_ce", seed=0)
        plan = sample_exact(star4, [0], 1)
        cache = forward_sampled(star4, params, plan)
        # only row 0 is populated in a 1-layer plan for batch {0}
        assert np.abs(cache.pre_activations[0][1:]).max() == 0.0

    def test_nodewise_plan_matches_dense_pipeline(self):
        graph = build_graph(6, cycle_edges(6) + [(0, 3)], feat_dim=3, seed=4)
        params = init_params([3, 4, 2], "elu", "softmax_ce", seed=5)
        cfg = SamplerConfig("nodewise", neighbors_per_node=2)
        plan = sample_plan(graph, cfg, [0, 2, 4], 2, np.random.default_rng(11))
        cache = forward_sampled(graph, params, plan)
        h = graph.features
        for layer, w in zip(plan.layers, params.layers):
            z = layer.laplacian.to_dense() @ h @ w
            h = activation_apply("elu", z)
        assert np.abs(cache.activations[-1] - h).max() < 1e-12

    def test_plan_depth_mismatch(self, star4):
        params = init_params([3, 2], seed=0)
        plan = sample_exact(star4, [0], 2)
        with pytest.raises(ShapeError):
            forward_sampled(star4, params, plan)


class TestLoss:
    def test_softmax_uniform_logits(self):
        n, c, b = 4, 5, 4
        cache = ForwardCache([], [np.zeros((n, c))], [], None)
        labels = np.array([0, 2, 4, 1])
        value, grad = loss_and_output_grad(cache, labels, np.arange(b), "softmax_ce")
        assert abs(value - math.log(c)) < 1e-12
        expected = np.full((n, c), 1.0 / c)
        expected[np.arange(n), labels] -= 1.0
        assert np.abs(grad - expected / b).max() < 1e-12

    def test_sigmoid_bce_zero_logits(self):
        n, c = 3, 2
        cache = ForwardCache([], [np.zeros((n, c))], [], None)
        labels = np.array([[1, 0], [0, 1], [1, 1]])
        value, grad = loss_and_output_grad(cache, labels, np.arange(n), "sigmoid_bce")
        assert abs(value - c * math.log(2)) < 1e-12
        assert np.abs(grad - (0.5 - labels) / n).max() < 1e-12

    @pytest.mark.parametrize("loss", ["softmax_ce", "sigmoid_bce"])
    def test_output_grad_matches_finite_differences(self, loss):
        rng = np.random.default_rng(17)
        n, c = 4, 3
        logits = rng.standard_normal((n, c))
        labels = rng.integers(0, c, size=n) if loss == "softmax_ce" else rng.integers(0, 2, size=(n, c))
        batch = np.arange(n)
        cache = ForwardCache([], [logits], [], None)
        value, grad = loss_and_output_grad(cache, labels, batch, loss)
        step = 1e-6
        fd = np.zeros_like(logits)
        for i in range(n):
            for j in range(c):
                up, down = logits.copy(), logits.copy()
                up[i, j] += step
                down[i, j] -= step
                v_up, _ = loss_and_output_grad(ForwardCache([], [up], [], None), labels, batch, loss)
                v_dn, _ = loss_and_output_grad(ForwardCache([], [down], [], None), labels, batch, loss)
                fd[i, j] = (v_up - v_dn) / (2 * step)
        assert max_rel_err(grad, fd, floor=1e-6) < 1e-6

    def test_empty_batch_rejected(self):
        cache = ForwardCache([], [np.zeros((2, 2))], [], None)
        with pytest.raises(ConfigError):
            loss_and_output_grad(cache, np.zeros(2, dtype=int), [], "softmax_ce")

    def test_label_out_of_range(self):
        cache = ForwardCache([], [np.zeros((2, 2))], [], None)
        with pytest.raises(LabelError):
            loss_and_output_grad(cache, np.array([0, 5]), [0, 1], "softmax_ce")

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(23)
        for _ in range(25):
            n, c = 3, 4
            logits = 3 * rng.standard_normal((n, c))
            cache = ForwardCache([], [logits], [], None)
            v1, _ = loss_and_output_grad(cache, rng.integers(0, c, n), np.arange(n), "softmax_ce")
            v2, _ = loss_and_output_grad(cache, rng.integers(0, 2, (n, c)), np.arange(n), "sigmoid_bce")
            assert v1 >= 0.0 and v2 >= 0.0


class TestBackward:
    def test_identity_activation_closed_form(self):
        graph = build_graph(3, [(0, 1), (1, 2)], feat_dim=2, seed=7)
        params = ModelParams([np.random.default_rng(0).standard_normal((2, 2))], "identity", "softmax_ce")
        cache = forward_full(graph, params)
        _, out_grad = loss_and_output_grad(cache, graph.labels, graph.train_nodes, "softmax_ce")
        grads = backward_full(graph, cache, out_grad, params)
        lx = graph.laplacian.to_dense() @ graph.features
        assert np.abs(grads.weight_grads[0] - lx.T @ out_grad).max() < 1e-14

    def test_zero_output_grad_gives_zero_gradients(self, sbm60):
        params = init_params([8, 4, 3], "elu", "softmax_ce", seed=1)
        cache = forward_full(sbm60, params)
        grads = backward_full(sbm60, cache, np.zeros_like(cache.activations[-1]), params)
        assert all(np.abs(g).max() == 0.0 for g in grads.weight_grads)

    def test_two_layer_elu_finite_differences(self):
        graph = build_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)], feat_dim=3, seed=8)
        params = init_params([3, 4, 2], "elu", "softmax_ce", seed=9)
        cache = forward_full(graph, params)
        _, out_grad = loss_and_output_grad(cache, graph.labels, graph.train_nodes, "softmax_ce")
        grads = backward_full(graph, cache, out_grad, params)
        fd = finite_difference_gradient(graph, params, graph.train_nodes)
        for g, f in zip(grads.weight_grads, fd.weight_grads):
            assert max_rel_err(g, f) < 1e-5

    def test_sampled_plan_finite_differences_on_sampled_loss(self):
        graph = build_graph(6, cycle_edges(6), feat_dim=3, seed=10)
        params = init_params([3, 4, 2], "elu", "softmax_ce", seed=11)
        cfg = SamplerConfig("nodewise", neighbors_per_node=2)
        plan = sample_plan(graph, cfg, [1, 4], 2, np.random.default_rng(3))
        cache = forward_sampled(graph, params, plan)
        _, out_grad = loss_and_output_grad(cache, graph.labels, plan.batch, "softmax_ce")
        grads = backward_sampled(plan, cache, out_grad, params)
        fd = finite_difference_gradient(graph, params, plan.batch, plan=plan)
        for g, f in zip(grads.weight_grads, fd.weight_grads):
            assert max_rel_err(g, f) < 1e-5

    def test_exact_plan_reproduces_backward_full(self, sbm60):
        params = init_params([8, 5, 3], "elu", "softmax_ce", seed=3)
        plan = sample_exact(sbm60, sbm60.train_nodes, 2)
        full_cache = forward_full(sbm60, params)
        _, og = loss_and_output_grad(full_cache, sbm60.labels, sbm60.train_nodes, "softmax_ce")
        full = backward_full(sbm60, full_cache, og, params)
        s_cache = forward_sampled(sbm60, params, plan)
        _, og_s = loss_and_output_grad(s_cache, sbm60.labels, plan.batch, "softmax_ce")
        sampled = backward_sampled(plan, s_cache, og_s, params)
        for a, b in zip(full.weight_grads, sampled.weight_grads):
            assert np.abs(a - b).max() < 1e-12

    def test_gradient_shapes_chain_with_params(self):
        graph = build_graph(4, star4_edges(), feat_dim=3, seed=12)
        params = init_params([3, 6, 5, 2], "relu", "softmax_ce", seed=13)
        cache = forward_full(graph, params)
        _, og = loss_and_output_grad(cache, graph.labels, graph.train_nodes, "softmax_ce")
        grads = backward_full(graph, cache, og, params)
        for g, w in zip(grads.weight_grads, params.layers):
            assert g.shape == w.shape


class TestGradientCheckMatrix:
    """Finite-difference agreement across activations, losses, depths."""

    @pytest.mark.parametrize("activation", ["relu", "elu"])
    @pytest.mark.parametrize("loss", ["softmax_ce", "sigmoid_bce"])
    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_combo(self, activation, loss, depth):
        rng = np.random.default_rng(hashes := depth * 100 + (activation == "elu") * 10 + (loss == "sigmoid_bce"))
        n = int(rng.integers(4, 7))
        graph = build_graph(
            n,
            random_connected_edges(n, rng),
            feat_dim=3,
            num_classes=2,
            seed=int(hashes),
            multilabel=(loss == "sigmoid_bce"),
        )
        dims = [3] + [4] * (depth - 1) + [2]
        params = init_params(dims, activation, loss, seed=int(hashes) + 1)
        cache = forward_full(graph, params)
        # keep fixtures away from activation kinks so central differences
        # converge; exact zeros come from dead rows and stay dead under
        # the perturbation, so only nonzero entries matter
        for z in cache.pre_activations:
            live = np.abs(z[z != 0.0])
            assert live.size == 0 or live.min() > 1e-4
        _, og = loss_and_output_grad(cache, graph.labels, graph.train_nodes, loss)
        grads = backward_full(graph, cache, og, params)
        fd = finite_difference_gradient(graph, params, graph.train_nodes)
        for g, f in zip(grads.weight_grads, fd.weight_grads):
            assert max_rel_err(g, f) < 1e-5
