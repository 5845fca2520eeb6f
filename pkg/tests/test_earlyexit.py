import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsgdlab import earlyexit as E
from gsgdlab.errors import DegenerateConfigurationError, DivergenceError
from gsgdlab.numerics import RngStream
from gsgdlab.oracle import top_indices
from gsgdlab.theory import pj_exact


def small_run(seed=5, **kw):
    base = dict(batch_size=32, keep_fraction=0.5, total_steps=40, step_size=0.1)
    base.update(kw)
    cfg = E.SiftConfig(**base)
    s = RngStream(seed)
    task = E.PlantedTask(6, s.substream("task"), n_eval=500)
    net = E.identity_init_net(6, 2, s.substream("init"))
    return task, net, cfg, s


class TestForward:
    def test_prefix_logit_example(self):
        net = E.LinearNet([[[1, 0], [0, 2]], [[0, 1], [1, 0]]], [1, 1])
        assert E.prefix_logit(net, 1, [1.0, 1.0]) == 3.0
        assert E.prefix_logit(net, 2, [1.0, 1.0]) == 3.0

    def test_identity_layers(self):
        gen = RngStream(1)
        theta, x = gen.normal(4), gen.normal((7, 4))
        net = E.LinearNet([np.eye(4)] * 3, theta)
        for j in (1, 2, 3):
            np.testing.assert_allclose(net.prefix_logit(j, x), x @ theta, rtol=0, atol=1e-15)

    def test_full_depth_is_prediction(self):
        gen = RngStream(2)
        net = E.random_linear_net(5, 3, gen)
        x = gen.normal((9, 5))
        np.testing.assert_array_equal(E.early_prediction(net, 3, x), net.predict(x))

    def test_prefix_matrix_product(self):
        gen = RngStream(3)
        net = E.random_linear_net(4, 3, gen)
        x = gen.normal((6, 4))
        for j in (1, 2, 3):
            np.testing.assert_allclose(x @ net.prefix_matrix(j).T @ net.head, net.prefix_logit(j, x), atol=1e-12)
            full = net.suffix_matrix(j) @ net.prefix_matrix(j)
            np.testing.assert_allclose(full, net.prefix_matrix(3), atol=1e-12)

    def test_errors(self):
        net = E.random_linear_net(3, 2, RngStream(0))
        with pytest.raises(ValueError):
            net.prefix_logit(0, np.zeros(3))
        with pytest.raises(ValueError):
            net.prefix_logit(3, np.zeros(3))
        with pytest.raises(ValueError):
            E.LinearNet([np.eye(3)], np.ones(2))
        with pytest.raises(ValueError):
            E.LinearNet([np.full((2, 2), np.nan)], np.ones(2))
        with pytest.raises(ValueError):
            E.LinearNet([], np.ones(2))


class TestLosses:
    def test_cross_entropy(self):
        assert E.cross_entropy(1.0, 0.5) == pytest.approx(math.log(2), abs=1e-15)
        assert E.cross_entropy(0.0, 0.9) == pytest.approx(-math.log(0.1), abs=1e-14)
        assert np.isfinite(E.cross_entropy(1.0, 0.0))

    def test_entropy(self):
        assert E.binary_entropy(0.5) == pytest.approx(math.log(2), abs=1e-15)
        assert E.binary_entropy(0.9) == pytest.approx(0.32508297339144824, abs=1e-15)
        assert E.binary_entropy(1.0) < 1e-10


class TestBeta:
    def test_full_depth_is_one(self):
        net = E.random_linear_net(6, 3, RngStream(4))
        assert E.beta_j(net, 3) == pytest.approx(1.0, abs=1e-14)

    def test_orthogonal_net(self):
        assert E.beta_j(E.orthogonal_beta_zero_net(), 1) == 0.0

    def test_brute_force(self):
        gen = RngStream(8)
        net = E.random_linear_net(8, 3, gen)
        W1, W2, W3 = net.layers
        for j, A, B in ((1, W1, W3 @ W2), (2, W2 @ W1, W3)):
            u, v = A.T @ net.head, A.T @ B.T @ net.head
            want = u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
            assert E.beta_j(net, j) == pytest.approx(want, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-1, 1), st.integers(2, 10), st.integers(2, 4), st.integers(0, 2**32))
    def test_constructed_net(self, beta, d, k, seed):
        net = E.linear_net_with_beta(beta, d, RngStream(seed), k)
        assert E.beta_j(net, 1) == pytest.approx(beta, abs=1e-8)

    def test_degenerate(self):
        net = E.LinearNet([np.eye(2), np.zeros((2, 2))], [1.0, 0.0])
        with pytest.raises(DegenerateConfigurationError):
            E.beta_j(net, 1)


class TestPjMonteCarlo:
    def test_full_depth(self):
        net = E.random_linear_net(5, 2, RngStream(1))
        est = E.pj_monte_carlo(net, 2, 10**6, RngStream(2))
        # both events coincide, so this is 2 P(u.z >= 0)
        assert abs(est.mean - 1.0) <= 3 * est.std_error

    def test_orthogonal(self):
        est = E.pj_monte_carlo(E.orthogonal_beta_zero_net(), 1, 10**6, RngStream(3))
        assert abs(est.mean - 0.5) <= 3 * est.std_error

    def test_random_net_matches_quadrature(self):
        net = E.linear_net_with_beta(0.6, 8, RngStream(4), k=3)
        est = E.pj_monte_carlo(net, 1, 10**6, RngStream(5))
        assert abs(est.mean - pj_exact(E.beta_j(net, 1))) <= 3 * est.std_error

    def test_z_moments(self):
        z = E.sample_assumption61_z(RngStream(6), 3, 10**6)
        cov = np.cov(z.T)
        np.testing.assert_allclose(np.diag(cov), 2.0, atol=0.01)
        np.testing.assert_allclose(cov[np.triu_indices(3, 1)], 0.0, atol=0.01)


class TestArgmaxEquivalence:
    def _pairs(self, n=10**4):
        gen = RngStream(9)
        d = 5
        x1, x2 = gen.normal((n, d)), gen.normal((n, d))
        y1, y2 = gen.integers(2, n).astype(float), gen.integers(2, n).astype(float)
        nets = [E.random_linear_net(d, 3, gen.substream(i)) for i in range(5)]
        return x1, x2, y1, y2, nets

    def test_increasing_logistic(self):
        # larger early loss  <=>  theta^T A_j (ybar1 x1 - ybar2 x2) <= 0
        x1, x2, y1, y2, nets = self._pairs()
        z = E.centered_label(y1)[:, None] * x1 - E.centered_label(y2)[:, None] * x2
        for net in nets:
            for j in (1, 2, 3):
                l1 = E.cross_entropy(y1, net.early_prediction(j, x1))
                l2 = E.cross_entropy(y2, net.early_prediction(j, x2))
                lin = z @ net.prefix_matrix(j).T @ net.head
                clear = np.abs(lin) > 1e-9
                np.testing.assert_array_equal((l1 >= l2)[clear], (lin <= 0)[clear])

    def test_decreasing_logistic_flips_sign(self):
        x1, x2, y1, y2, nets = self._pairs(2000)
        z = E.centered_label(y1)[:, None] * x1 - E.centered_label(y2)[:, None] * x2
        net = nets[0]
        s1, s2 = net.prefix_logit(1, x1), net.prefix_logit(1, x2)
        dec = lambda s: 1.0 / (1.0 + np.exp(s))
        l1, l2 = E.cross_entropy(y1, dec(s1)), E.cross_entropy(y2, dec(s2))
        lin = z @ net.prefix_matrix(1).T @ net.head
        clear = np.abs(lin) > 1e-9
        np.testing.assert_array_equal((l1 >= l2)[clear], (lin >= 0)[clear])


class TestSelection:
    def test_full_depth_matches_exact_top_fraction(self):
        gen = RngStream(10)
        net = E.random_linear_net(4, 2, gen)
        x, y = gen.normal((64, 4)), gen.integers(2, 64).astype(float)
        cfg = E.SiftConfig(exit_layer=2)
        exact = E.cross_entropy(y, net.predict(x))
        np.testing.assert_array_equal(E.select_batch(net, cfg, x, y), np.sort(top_indices(exact, 32)))

    def test_entropy_criterion_ignores_labels(self):
        gen = RngStream(11)
        net = E.random_linear_net(4, 2, gen)
        x, y = gen.normal((16, 4)), gen.integers(2, 16).astype(float)
        cfg = E.SiftConfig(criterion="early-entropy")
        np.testing.assert_array_equal(E.select_batch(net, cfg, x, y), E.select_batch(net, cfg, x, 1 - y))

    def test_gradients_by_finite_differences(self):
        gen = RngStream(12)
        net = E.random_linear_net(3, 2, gen)
        x, y = gen.normal((10, 3)), gen.integers(2, 10).astype(float)
        layer_grads, head_grad = E.cross_entropy_grads(net, x, y)
        h = 1e-6
        for params, grad in [(net.head, head_grad)] + list(zip(net.layers, layer_grads)):
            for idx in np.ndindex(params.shape):
                old = params[idx]
                params[idx] = old + h
                up = E.model_loss(net, x, y)
                params[idx] = old - h
                down = E.model_loss(net, x, y)
                params[idx] = old
                assert grad[idx] == pytest.approx((up - down) / (2 * h), abs=1e-7)


class TestSiftTrain:
    def test_accounting(self):
        task, net, cfg, s = small_run()
        log = E.sift_train(task, net, cfg, s.substream("train"))
        extra = (cfg.batch_size - cfg.keep_count) * (cfg.total_steps - cfg.warmup)
        assert log.scored_samples[-1] - log.backprop_samples[-1] == extra
        assert log.scored_samples[-1] == cfg.batch_size * cfg.total_steps
        assert np.all(np.diff(log.backprop_samples) > 0)

    def test_default_warmup(self):
        assert E.SiftConfig(total_steps=200).warmup == 10
        assert E.SiftConfig(total_steps=30).warmup == 2

    def test_keep_all_matches_baseline(self):
        task, net, cfg, s = small_run(keep_fraction=1.0)
        a = E.sift_train(task, net, cfg, s.substream("train"))
        b = E.baseline_train(task, net, cfg, s.substream("train"))
        np.testing.assert_array_equal(a.eval_loss, b.eval_loss)
        np.testing.assert_array_equal(a.backprop_samples, b.backprop_samples)

    def test_full_warmup_matches_baseline(self):
        task, net, cfg, s = small_run()
        cfg = replace(cfg, warmup_steps=cfg.total_steps)
        a = E.sift_train(task, net, cfg, s.substream("train"))
        b = E.baseline_train(task, net, cfg, s.substream("train"))
        np.testing.assert_array_equal(a.eval_loss, b.eval_loss)

    def test_input_net_untouched(self):
        task, net, cfg, s = small_run()
        before = net.copy()
        E.sift_train(task, net, cfg, s.substream("train"))
        np.testing.assert_array_equal(net.head, before.head)

    def test_learns(self):
        task, net, cfg, s = small_run(total_steps=200)
        log = E.baseline_train(task, net, cfg, s.substream("train"))
        assert log.eval_loss[-1] < 0.5 * log.eval_loss[0]

    def test_backprop_to_reach(self):
        log = E.TrainLog(np.arange(1, 4), np.array([0.9, 0.4, 0.2]), np.array([10, 20, 30]), np.array([10, 20, 30]))
        assert log.backprop_to_reach(0.5) == 20
        assert log.backprop_to_reach(0.1) == math.inf

    def test_divergence(self):
        task, net, cfg, s = small_run(step_size=1e4)
        with pytest.raises(DivergenceError):
            E.sift_train(task, E.random_linear_net(6, 2, RngStream(1), scale=5), cfg, s.substream("train"))

    def test_config_errors(self):
        with pytest.raises(ValueError):
            E.SiftConfig(keep_fraction=0.0)
        with pytest.raises(ValueError):
            E.SiftConfig(criterion="loss")
        with pytest.raises(ValueError):
            E.SiftConfig(step_size=0)
        task, net, cfg, s = small_run(exit_layer=3)
        with pytest.raises(ValueError):
            E.sift_train(task, net, cfg, s)
