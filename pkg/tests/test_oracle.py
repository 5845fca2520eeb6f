import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsgdlab.numerics import RngStream
from gsgdlab.oracle import (
    EXACT, GradientCounter, NoiseModel, OracleDraw, finalize, norm_mu, query, select_greedy,
    select_top_fraction, select_uniform, top_count,
)
from gsgdlab.problems import Samples, noisy_least_squares


def draw_with(approx):
    approx = np.asarray(approx, dtype=float)
    return OracleDraw(Samples(np.zeros((len(approx), 1)), np.zeros(len(approx))), approx.copy(), approx)


class TestNoiseModel:
    def test_exact_mode_copies(self, default_problem, rng):
        d = query(default_problem, np.zeros(10), 16, EXACT, rng)
        np.testing.assert_array_equal(d.approx_losses, d.exact_losses)
        assert d.approx_losses is not d.exact_losses

    def test_zero_sigma_common_scale(self, default_problem, rng):
        noise = NoiseModel("log-multiplicative", 0.0, mu=0.7)
        d = query(default_problem, np.zeros(10), 16, noise, rng)
        np.testing.assert_allclose(d.approx_losses, d.exact_losses * math.exp(0.7), rtol=1e-15)

    def test_log_noise_moments(self, rng):
        noise = NoiseModel("log-multiplicative", 0.3, mu=0.25)
        exact = np.full(10**6, 2.0)
        approx = noise.apply(np.zeros(3), exact, rng)
        z = np.log(approx / exact) - 0.25
        assert abs(z.mean()) <= 3 * 0.3 / 1000
        assert abs(z.var() - 0.09) <= 0.09 * 0.01

    def test_rademacher_moments(self, rng):
        z = NoiseModel(zeta="rademacher").draw_zeta(rng, 10**6)
        assert set(np.unique(z)) == {-1.0, 1.0}
        assert abs(z.mean()) <= 3e-3
        assert abs(z.var() - 1) <= 0.01

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            NoiseModel("additive")
        with pytest.raises(ValueError):
            NoiseModel("log-multiplicative", -0.1)
        with pytest.raises(ValueError):
            NoiseModel(zeta="cauchy")

    def test_query_rejects_zero_R(self, default_problem, rng):
        with pytest.raises(ValueError):
            query(default_problem, np.zeros(10), 0, EXACT, rng)


class TestGreedy:
    def test_examples(self):
        assert select_greedy(draw_with([1.0, 3.0, 2.0])) == 1
        assert select_greedy(draw_with([2.0, 2.0, 2.0])) == 0

    def test_exact_mode_is_argmax(self, default_problem):
        r = RngStream(17)
        w = np.full(10, 0.3)
        samples = default_problem.draw(r, (10**5, 5))
        losses = default_problem.loss(w, samples)
        picked = np.array([select_greedy(OracleDraw(samples[i], losses[i], losses[i].copy())) for i in range(10**5)])
        np.testing.assert_array_equal(picked, np.argmax(losses, axis=1))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(0.01, 2))
    def test_mu_invariance(self, seed, mu_const, scale):
        prob = noisy_least_squares()
        w = RngStream(seed).normal(10)
        d = query(prob, w, 8, EXACT, RngStream(seed, 1))
        picks = []
        for mu in (mu_const, norm_mu(scale)):
            noise = NoiseModel("log-multiplicative", 0.4, mu=mu)
            approx = noise.apply(w, d.exact_losses, RngStream(seed, 2))
            picks.append(select_greedy(OracleDraw(d.samples, d.exact_losses, approx)))
        assert picks[0] == picks[1]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1e6), min_size=1, max_size=20))
    def test_monotone_transform_invariance(self, losses):
        base = select_greedy(draw_with(losses))
        assert select_greedy(draw_with(np.log1p(losses))) == base
        assert select_greedy(draw_with(np.sqrt(losses))) == base


class TestUniform:
    def test_single(self, rng):
        assert all(select_uniform(draw_with([5.0]), rng) == 0 for _ in range(20))

    def test_frequencies(self):
        r = RngStream(3)
        d = draw_with([1.0, 2.0, 3.0, 4.0])
        picks = np.array([select_uniform(d, r) for _ in range(10**6)])
        freq = np.bincount(picks, minlength=4) / picks.size
        se = math.sqrt(0.25 * 0.75 / picks.size)
        assert np.all(np.abs(freq - 0.25) <= 3 * se)

    def test_replay(self):
        d = draw_with([1.0, 2.0, 3.0])
        r1, r2 = RngStream(5), RngStream(5)
        assert [select_uniform(d, r1) for _ in range(50)] == [select_uniform(d, r2) for _ in range(50)]


class TestTopFraction:
    def test_examples(self):
        assert select_top_fraction(draw_with([5, 1, 4, 2]), 0.5) == [0, 2]
        assert sorted(select_top_fraction(draw_with([5, 1, 4, 2]), 1.0)) == [0, 1, 2, 3]

    def test_order_and_ties(self):
        assert select_top_fraction(draw_with([1, 3, 3, 2]), 0.75) == [1, 2, 3]

    def test_count(self):
        assert top_count(0.3, 10) == 3
        assert top_count(0.01, 10) == 1
        assert top_count(0.5, 7) == 4
        with pytest.raises(ValueError):
            top_count(0.0, 10)
        with pytest.raises(ValueError):
            top_count(1.5, 10)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 5), min_size=2, max_size=30))
    def test_prefix_consistency(self, losses):
        d = draw_with(losses)
        R = len(losses)
        prev = []
        for k in range(1, R + 1):
            cur = select_top_fraction(d, k / R)
            assert cur[: len(prev)] == prev
            assert len(cur) == k
            prev = cur


class TestFinalize:
    def test_delegates_bitwise(self, default_problem, rng):
        w = rng.normal(10)
        d = query(default_problem, w, 6, EXACT, rng)
        i = select_greedy(d)
        g = finalize(default_problem, w, d, i)
        np.testing.assert_array_equal(g, default_problem.grad(w, d.samples[i]))
        assert d.selected_index == i
        np.testing.assert_array_equal(d.gradient, g)

    def test_zero_gradient_when_fit(self):
        prob = noisy_least_squares(dim=2)
        w = np.array([2.0, 1.0])
        s = Samples(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([2.0, 5.0]))
        d = OracleDraw(s, prob.loss(w, s), prob.loss(w, s))
        np.testing.assert_array_equal(finalize(prob, w, d, 0), [0.0, 0.0])

    def test_counter(self, default_problem, rng):
        counter = GradientCounter()
        w = np.zeros(10)
        for n in range(1, 26):
            d = query(default_problem, w, 4, EXACT, rng)
            finalize(default_problem, w, d, select_uniform(d, rng), counter)
            assert counter.count == n

    def test_index_out_of_range(self, default_problem, rng):
        d = query(default_problem, np.zeros(10), 3, EXACT, rng)
        with pytest.raises(ValueError):
            finalize(default_problem, np.zeros(10), d, 3)
        with pytest.raises(ValueError):
            finalize(default_problem, np.zeros(10), d, -1)
