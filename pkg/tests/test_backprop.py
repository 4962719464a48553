import numpy as np
import pytest

from cldl.backprop import (
    StaleCacheError,
    backward,
    finite_diff_check,
    forward_tape,
    frozen_objective,
    raw_objective_gap,
)
from cldl.loss import LossConfig, batch_loss_terms
from cldl.network import (
    PlacementConfig,
    build_heads,
    build_network,
    conv,
    dense,
    flatten,
    mlp_head_specs,
    relu_layer,
    softmax_layer,
)
from cldl.tensor_ops import RngState, softmax


def mlp_model(seed=0, m=3, k=4, d=3):
    specs = [flatten(), dense(8), relu_layer(), dense(6), relu_layer(), dense(k)]
    net = build_network(specs, (d,), RngState(seed))
    heads = build_heads(
        net, PlacementConfig(m, 0.8), lambda s: mlp_head_specs(k, 5), RngState(seed + 1)
    )
    return net, heads


def batch(seed, n=4, d=3, k=4):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, d)), rng.integers(1, k + 1, size=n)


class TestBackward:
    def test_suppression_bound(self):
        """With every companion near 1-eps, head m's gradient contribution is
        scaled down to roughly eps ** (1/(M-1))."""
        net, heads = mlp_model(0)
        x, y = batch(0)
        cfg = LossConfig(mode="cldl", lam=(1.0, 1.0, 1.0))
        cache = forward_tape(net, heads, x)
        t, _ = batch_loss_terms(cache.scores, y, cfg)
        t_bar = t.copy()
        t_bar[:, :] = 1.0
        base = backward(net, heads, cache, y, cfg, t_bar=t_bar)
        eps = 1e-6
        t_bar2 = t_bar.copy()
        t_bar2[:, 0] = eps  # companions of head 1 confident
        supp = backward(net, heads, cache, y, cfg, t_bar=t_bar2)
        # head 1's own weight gradients shrink by exactly eps
        for g0, g1 in zip(base.heads[0], supp.heads[0]):
            assert np.allclose(g1, eps * g0)

    def test_dsn_star_equals_sum_of_independent_backprops(self):
        net, heads = mlp_model(2)
        x, y = batch(2)
        lam = (0.7, 0.4, 1.1)
        cfg = LossConfig(mode="dsn-star", lam=lam)
        cache = forward_tape(net, heads, x)
        full = backward(net, heads, cache, y, cfg)
        # one run per head with the other heads' weights zeroed out of the sum
        acc_body = [np.zeros_like(w) for w in net.weights]
        acc_heads = [[np.zeros_like(w) for w in h.net.weights] for h in heads]
        for j in range(3):
            t_bar = np.zeros((len(y), 3))
            t_bar[:, j] = 1.0
            g = backward(net, heads, cache, y, cfg, t_bar=t_bar)
            for a, b in zip(acc_body, g.body):
                a += b
            for a, b in zip(acc_heads[j], g.heads[j]):
                a += b
        for a, b in zip(acc_body, full.body):
            assert np.max(np.abs(a - b)) < 1e-12
        for j in range(3):
            for a, b in zip(acc_heads[j], full.heads[j]):
                assert np.max(np.abs(a - b)) < 1e-12

    def test_zero_gradient_above_attach(self):
        """Only head 1 active: body layers above r_1 get exactly zero."""
        net, heads = mlp_model(4)
        x, y = batch(4)
        cfg = LossConfig(mode="cldl", lam=(1.0, 1.0, 1.0))
        cache = forward_tape(net, heads, x)
        t_bar = np.zeros((len(y), 3))
        t_bar[:, 0] = 1.0  # lambda_2, lambda_3 effectively zero
        g = backward(net, heads, cache, y, cfg, t_bar=t_bar)
        r1 = heads[0].attach
        for j in range(r1, net.num_weight_layers):
            assert np.array_equal(g.body[j], np.zeros_like(g.body[j]))
        assert np.any(g.body[r1 - 1] != 0)

    def test_stale_cache_rejected(self):
        net, heads = mlp_model(5)
        x, y = batch(5)
        cache = forward_tape(net, heads, x)
        cfg = LossConfig(lam=(1.0, 1.0, 1.0))
        with pytest.raises(StaleCacheError):
            backward(net, heads, cache, y[:-1], cfg)

    def test_decay_only_gradient_is_2aw(self):
        """All modulation values zeroed: the data term vanishes and only the
        decay gradient 2*alpha*W remains, exactly."""
        net, heads = mlp_model(6)
        x, y = batch(6)
        alpha = 0.037
        cfg = LossConfig(mode="cldl", lam=(1.0, 1.0, 1.0), alpha=alpha)
        cache = forward_tape(net, heads, x)
        t_bar = np.zeros((len(y), 3))
        g = backward(net, heads, cache, y, cfg, t_bar=t_bar)
        for grad, w in zip(g.body, net.weights):
            assert np.array_equal(grad, 2.0 * alpha * w)
        for gs, h in zip(g.heads, heads):
            for grad, w in zip(gs, h.net.weights):
                assert np.array_equal(grad, 2.0 * alpha * w)

    def test_t_linearity(self):
        net, heads = mlp_model(7)
        x, y = batch(7)
        cfg = LossConfig(mode="cldl", lam=(0.3, 0.3, 1.0))
        cache = forward_tape(net, heads, x)
        t_bar, _ = batch_loss_terms(cache.scores, y, cfg)
        c = 3.7
        for j in range(3):
            only = np.zeros_like(t_bar)
            only[:, j] = t_bar[:, j]
            g1 = backward(net, heads, cache, y, cfg, t_bar=only)
            g2 = backward(net, heads, cache, y, cfg, t_bar=c * only)
            for a, b in zip(g1.flat(), g2.flat()):
                assert np.allclose(c * a, b, rtol=0, atol=1e-14)


class TestFrozenObjective:
    def test_tbar_one_equals_dsn_star(self):
        net, heads = mlp_model(8)
        x, y = batch(8)
        lam = (0.3, 0.3, 1.0)
        t_bar = np.ones((len(y), 3))
        a = frozen_objective(net, heads, x, y, LossConfig(mode="cldl", lam=lam), t_bar)
        cache = forward_tape(net, heads, x)
        t, c = batch_loss_terms(cache.scores, y, LossConfig(mode="dsn-star", lam=lam))
        b = float(np.mean((t * c) @ np.array(lam)))
        assert abs(a - b) < 1e-15

    def test_tbar_zero_is_zero(self):
        net, heads = mlp_model(9)
        x, y = batch(9)
        cfg = LossConfig(mode="cldl", lam=(1.0, 1.0, 1.0), alpha=0.0)
        assert frozen_objective(net, heads, x, y, cfg, np.zeros((len(y), 3))) == 0.0

    def test_live_tbar_matches_total_objective(self):
        net, heads = mlp_model(10)
        x, y = batch(10)
        cfg = LossConfig(mode="cldl", lam=(0.3, 0.3, 1.0), alpha=1e-3)
        cache = forward_tape(net, heads, x)
        t, c = batch_loss_terms(cache.scores, y, cfg)
        frozen = frozen_objective(net, heads, x, y, cfg, t)
        from cldl.backprop import live_objective

        assert abs(frozen - live_objective(net, heads, x, y, cfg)) < 1e-15


class TestFiniteDiff:
    def test_linear_single_head_matches_closed_form(self):
        """Single linear layer + identity-ish head: softmax cross-entropy has
        the closed-form gradient (p - onehot) x^T."""
        k, d = 4, 3
        net = build_network([dense(k)], (d,), RngState(11))
        heads = build_heads(
            net, PlacementConfig(1),
            lambda s: [dense(k), softmax_layer()],
            RngState(12),
        )
        # identity head: the body weight sees plain softmax cross-entropy
        heads[0].net.weights[0][...] = np.eye(k)
        x = np.random.default_rng(13).normal(size=(1, d))
        y = np.array([2])
        cfg = LossConfig(mode="single", lam=(1.0,), alpha=0.0)
        cache = forward_tape(net, heads, x)
        g = backward(net, heads, cache, y, cfg)
        p = softmax(net.weights[0] @ x[0])
        onehot = np.zeros(k)
        onehot[1] = 1.0
        want = np.outer(p - onehot, x[0])
        assert np.max(np.abs(g.body[0] - want)) < 1e-12
        err = finite_diff_check(net, heads, x, y, cfg, delta=1e-5, trials=40,
                                rng=np.random.default_rng(14))
        assert err < 1e-8

    def test_random_mlp_cldl(self):
        net, heads = mlp_model(15)
        x, y = batch(15)
        cfg = LossConfig(mode="cldl", lam=(0.3, 0.3, 1.0), alpha=1e-4)
        err = finite_diff_check(net, heads, x, y, cfg, delta=1e-5, trials=100,
                                rng=np.random.default_rng(16))
        assert err < 1e-4

    def test_conv_net_all_modes(self):
        specs = [conv(3, (3, 3), padding="same"), relu_layer(), conv(4, (3, 3)),
                 relu_layer(), flatten(), dense(3)]
        net = build_network(specs, (1, 6, 6), RngState(17))
        heads = build_heads(net, PlacementConfig(3, 0.8),
                            lambda s: mlp_head_specs(3, 5), RngState(18))
        x = np.random.default_rng(19).normal(size=(2, 1, 6, 6))
        y = np.array([1, 3])
        for mode in ("cldl", "cldl-minus", "dsn-star"):
            cfg = LossConfig(mode=mode, lam=(0.3, 0.3, 1.0), alpha=1e-4)
            err = finite_diff_check(net, heads, x, y, cfg, trials=60,
                                    rng=np.random.default_rng(20))
            assert err < 1e-4, mode

    def test_delta_sweep_u_shape(self):
        """Truncation error dominates at large delta, roundoff at tiny delta."""
        net, heads = mlp_model(21)
        x, y = batch(21)
        cfg = LossConfig(mode="cldl", lam=(0.3, 0.3, 1.0))
        errs = [
            finite_diff_check(net, heads, x, y, cfg, delta=d, trials=50,
                              rng=np.random.default_rng(22))
            for d in (1e-3, 1e-5, 1e-7)
        ]
        assert errs[1] < errs[0]
        assert errs[1] < errs[2]

    def test_raw_objective_disagrees(self):
        """Differencing the raw objective (T not frozen) must NOT match the
        detached-T gradients; that is the point of the update rule."""
        net, heads = mlp_model(23)
        x, y = batch(23)
        cfg = LossConfig(mode="cldl", lam=(1.0, 1.0, 1.0))
        frozen_err = finite_diff_check(net, heads, x, y, cfg, trials=60,
                                       rng=np.random.default_rng(24))
        raw_err = raw_objective_gap(net, heads, x, y, cfg, trials=60,
                                    rng=np.random.default_rng(24))
        assert frozen_err < 1e-4
        assert raw_err > 1e-2
