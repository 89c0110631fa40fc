"""Network forward/backward, optimizers, clipping, and serialization."""

import math

import numpy as np
import pytest

from shiftstack.exceptions import DimensionMismatchError
from shiftstack.nn import (
    AdamState,
    Layer,
    Mlp,
    SgdState,
    adam_step,
    backward,
    clip_weights,
    forward,
    grad_check,
    init_mlp,
    mlp_from_dict,
    mlp_to_dict,
    sgd_step,
)


def squared_loss(target):
    def fn(out):
        diff = out - target
        return float(np.sum(diff**2)), 2.0 * diff

    return fn


def fd_param_grads(net, loss_fn, X, h=1e-6):
    """Independent central-difference oracle over every parameter entry."""
    params = net.params()
    grads = []
    for idx, p in enumerate(params):
        g = np.zeros_like(p)
        for pos in np.ndindex(p.shape):
            step = h * max(1.0, abs(p[pos]))
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[idx][pos] += step
            minus[idx][pos] -= step
            g[pos] = (
                loss_fn(forward(net.with_params(plus), X))[0]
                - loss_fn(forward(net.with_params(minus), X))[0]
            ) / (2 * step)
        grads.append(g)
    return grads


class TestForward:
    def test_identity_layer_passes_through(self):
        net = Mlp(layers=(Layer(w=np.eye(3), b=np.zeros(3), activation="identity"),))
        X = np.array([[1.0, -2.0, 0.5], [3.0, 0.0, -1.0]])
        np.testing.assert_array_equal(forward(net, X), X)

    def test_zero_weights_constant_output(self):
        c = np.array([0.7, -1.2])
        net = Mlp(layers=(Layer(w=np.zeros((3, 2)), b=c, activation="identity"),))
        X = np.random.default_rng(0).normal(size=(5, 3))
        out = forward(net, X)
        for row in out:
            np.testing.assert_array_equal(row, c)

    def test_two_layer_tanh_matches_hand_evaluation(self):
        w1 = np.array([[0.2, -0.4], [0.1, 0.3]])
        b1 = np.array([0.05, -0.02])
        w2 = np.array([[0.7], [-0.5]])
        b2 = np.array([0.1])
        net = Mlp(layers=(
            Layer(w=w1, b=b1, activation="tanh"),
            Layer(w=w2, b=b2, activation="identity"),
        ))
        x = np.array([[0.3, -0.6]])
        # scalar evaluation of the composition, written out independently
        h1 = math.tanh(0.3 * 0.2 + (-0.6) * 0.1 + 0.05)
        h2 = math.tanh(0.3 * (-0.4) + (-0.6) * 0.3 - 0.02)
        expected = 0.7 * h1 - 0.5 * h2 + 0.1
        assert forward(net, x)[0, 0] == pytest.approx(expected, abs=1e-12)

    def test_forward_is_pure(self):
        rng = np.random.default_rng(3)
        net = init_mlp([4, 8, 2], ["tanh", "identity"], rng)
        X = rng.normal(size=(10, 4))
        out1 = forward(net, X)
        out2 = forward(net, X)
        assert np.array_equal(out1, out2)

    def test_dimension_mismatch_names_layer(self):
        net = Mlp(layers=(Layer(w=np.eye(3), b=np.zeros(3), activation="identity"),))
        with pytest.raises(DimensionMismatchError, match="layer 0"):
            forward(net, np.zeros((2, 5)))


class TestBackward:
    def test_linear_layer_least_squares_gradient(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(6, 3))
        W = rng.normal(size=(3, 2))
        Y = rng.normal(size=(6, 2))
        net = Mlp(layers=(Layer(w=W, b=np.zeros(2), activation="identity"),))
        n = X.shape[0]
        # mean squared error upstream: 2 (XW - Y) / n
        upstream = 2.0 * (X @ W - Y) / n
        grads, _ = backward(net, X, upstream)
        np.testing.assert_allclose(grads[0][0], 2.0 * X.T @ (X @ W - Y) / n, atol=1e-12)

    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(2)
        net = init_mlp([3, 5, 2], ["relu", "identity"], rng)
        X = rng.normal(size=(4, 3))
        grads, dx = backward(net, X, np.zeros((4, 2)))
        for dw, db in grads:
            assert not dw.any() and not db.any()
        assert not dx.any()

    def test_random_two_layer_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        net = init_mlp([3, 6, 1], ["tanh", "identity"], rng)
        X = rng.normal(size=(5, 3))
        target = rng.normal(size=(5, 1))
        loss_fn = squared_loss(target)
        out = forward(net, X)
        analytic, _ = backward(net, X, loss_fn(out)[1])
        numeric = fd_param_grads(net, loss_fn, X)
        for (dw, db), idx in zip(analytic, range(len(net.layers))):
            np.testing.assert_allclose(dw, numeric[2 * idx], rtol=1e-4, atol=1e-7)
            np.testing.assert_allclose(db, numeric[2 * idx + 1], rtol=1e-4, atol=1e-7)

    def test_upstream_shape_mismatch(self):
        net = Mlp(layers=(Layer(w=np.eye(2), b=np.zeros(2), activation="identity"),))
        with pytest.raises(DimensionMismatchError):
            backward(net, np.zeros((3, 2)), np.zeros((3, 5)))


class TestGradCheck:
    def test_linear_net_squared_loss(self):
        rng = np.random.default_rng(11)
        net = init_mlp([3, 2], ["identity"], rng)
        X = rng.normal(size=(6, 3))
        report = grad_check(net, squared_loss(rng.normal(size=(6, 2))), X, tol=1e-6)
        assert report.passed
        assert report.max_rel_error < 1e-6

    def test_tanh_net(self):
        rng = np.random.default_rng(12)
        net = init_mlp([2, 8, 1], ["tanh", "identity"], rng)
        X = rng.normal(size=(7, 2))
        report = grad_check(net, squared_loss(rng.normal(size=(7, 1))), X, tol=1e-4)
        assert report.passed

    def test_relu_net_away_from_kinks(self):
        rng = np.random.default_rng(13)
        for attempt in range(50):
            net = init_mlp([2, 6, 1], ["relu", "identity"], rng)
            X = rng.normal(size=(5, 2))
            pre = X @ net.layers[0].w + net.layers[0].b
            if np.min(np.abs(pre)) > 1e-3:
                break
        else:
            pytest.skip("no kink-free sample drawn")
        report = grad_check(net, squared_loss(rng.normal(size=(5, 1))), X, tol=1e-4)
        assert report.passed

    def test_twenty_random_seeds(self):
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            net = init_mlp([3, 5, 2], ["tanh", "identity"], rng)
            X = rng.normal(size=(4, 3))
            report = grad_check(net, squared_loss(rng.normal(size=(4, 2))), X, tol=1e-4)
            assert report.passed, f"seed {seed}: {report.max_rel_error}"


class TestOptimizers:
    def test_plain_sgd_scalar_step(self):
        state = SgdState(lr=0.1)
        (new,) = sgd_step(state, [np.array([0.0])], [np.array([1.0])])
        assert new[0] == pytest.approx(-0.1)
        assert state.step_count == 1

    def test_zero_gradient_leaves_params(self):
        params = [np.array([1.0, 2.0]), np.array([[3.0]])]
        state = SgdState(lr=0.5)
        new = sgd_step(state, params, [np.zeros(2), np.zeros((1, 1))])
        for before, after in zip(params, new):
            np.testing.assert_array_equal(before, after)

    def test_adam_converges_on_quadratic(self):
        # closed-form minimizer of 0.5 z'Hz - g'z is H^{-1} g
        H = np.array([[3.0, 0.5], [0.5, 1.0]])
        g = np.array([1.0, -2.0])
        z_star = np.linalg.solve(H, g)
        z = np.zeros(2)
        state = AdamState(lr=0.05)
        for _ in range(500):
            grad = H @ z - g
            (z,) = adam_step(state, [z], [grad])
        assert np.linalg.norm(z - z_star) < 1e-3

    def test_sgd_converges_on_quadratic(self):
        H = np.array([[2.0, 0.0], [0.0, 0.5]])
        g = np.array([1.0, 1.0])
        z_star = np.linalg.solve(H, g)
        z = np.zeros(2)
        state = SgdState(lr=0.1)
        for _ in range(500):
            (z,) = sgd_step(state, [z], [H @ z - g])
        assert np.linalg.norm(z - z_star) < 1e-3

    def test_small_steps_strictly_decrease_quadratic(self):
        H = np.array([[4.0, 1.0], [1.0, 2.0]])  # fixed PSD quadratic

        def value(z):
            return 0.5 * z @ H @ z

        z = np.array([1.0, -1.5])
        state = SgdState(lr=1e-3)
        for _ in range(50):
            before = value(z)
            (z,) = sgd_step(state, [z], [H @ z])
            assert value(z) < before


class TestClipWeights:
    def test_inside_range_untouched(self):
        rng = np.random.default_rng(21)
        net = init_mlp([3, 4, 1], ["tanh", "identity"], rng)
        c = 10.0
        clipped = clip_weights(net, c)
        for before, after in zip(net.params(), clipped.params()):
            np.testing.assert_array_equal(before, after)

    def test_large_entry_clamped(self):
        net = Mlp(layers=(Layer(w=np.array([[5.0]]), b=np.array([-3.0]),
                                activation="identity"),))
        clipped = clip_weights(net, 0.1)
        assert clipped.layers[0].w[0, 0] == pytest.approx(0.1)
        assert clipped.layers[0].b[0] == pytest.approx(-0.1)

    def test_all_entries_bounded(self):
        rng = np.random.default_rng(22)
        net = init_mlp([4, 16, 1], ["tanh", "identity"], rng)
        c = 0.05
        clipped = clip_weights(net, c)
        for p in clipped.params():
            assert np.max(np.abs(p)) <= c + 1e-15

    def test_sampled_lipschitz_bound(self):
        rng = np.random.default_rng(23)
        net = init_mlp([3, 16, 1], ["tanh", "identity"], rng)
        c = 0.05
        clipped = clip_weights(net, c)
        # activations are 1-Lipschitz, so the operator-norm product bounds
        # the network's Lipschitz constant
        k_hat = 1.0
        for layer in clipped.layers:
            k_hat *= np.linalg.norm(layer.w, 2)
        for _ in range(200):
            x1 = rng.normal(size=(1, 3))
            x2 = rng.normal(size=(1, 3))
            gap = abs(forward(clipped, x1)[0, 0] - forward(clipped, x2)[0, 0])
            assert gap <= k_hat * np.linalg.norm(x1 - x2) + 1e-12


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(31)
        net = init_mlp([3, 7, 2], ["relu", "identity"], rng)
        doc = mlp_to_dict(net)
        assert doc["format_version"] == 1
        restored = mlp_from_dict(doc)
        X = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(forward(net, X), forward(restored, X))

    def test_unknown_version_rejected(self):
        with pytest.raises(ValueError, match="version"):
            mlp_from_dict({"format_version": 99, "layers": []})


class TestValidation:
    def test_dims_must_chain(self):
        with pytest.raises(DimensionMismatchError):
            Mlp(layers=(
                Layer(w=np.eye(3), b=np.zeros(3), activation="tanh"),
                Layer(w=np.eye(4), b=np.zeros(4), activation="identity"),
            ))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            Layer(w=np.array([[np.nan]]), b=np.zeros(1), activation="identity")

    def test_unknown_activation_rejected(self):
        with pytest.raises(ValueError):
            Layer(w=np.eye(1), b=np.zeros(1), activation="gelu")
