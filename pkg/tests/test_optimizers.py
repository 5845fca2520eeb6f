import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsgdlab import optimizers as O
from gsgdlab.errors import DivergenceError
from gsgdlab.numerics import RngStream
from gsgdlab.oracle import EXACT, NoiseModel
from gsgdlab.problems import fixed_sample_problem, noisy_least_squares, realizable_least_squares

ETA = 0.05  # 0.1 / L on the default instance


def reference_loop(problem, method, R, eta, K, w0, rng, noise=EXACT):
    """Plain per-step loop with the same draw order as the vectorised runner (K <= BLOCK)."""
    s = problem.draw(rng, (K, R))
    zeta = noise.draw_zeta(rng, (K, R)) if noise.mode != "exact" else None
    picks = rng.integers(R, K)
    w = np.array(w0, dtype=float)
    ws = [w]
    for k in range(K):
        a, y = s.features[k], s.labels[k]
        losses = (a @ w - y) ** 2
        if method == "gsgd":
            approx = losses if zeta is None else losses * np.exp(noise.sigma * zeta[k])
            i = int(np.argmax(approx))
        else:
            i = int(picks[k])
        w = w - eta * 2 * (a[i] @ w - y[i]) * a[i]
        ws.append(w)
    return np.array(ws)


class TestRun:
    @pytest.mark.parametrize("method", ["sgd", "gsgd"])
    def test_matches_reference_loop(self, method, default_problem, default_w0):
        noise = NoiseModel("log-multiplicative", 0.2)
        traj = O.run(default_problem, method, 5, noise, O.StepSchedule(ETA), 100, default_w0, RngStream(3), record_every=1)
        ref = reference_loop(default_problem, method, 5, ETA, 100, default_w0, RngStream(3), noise)
        np.testing.assert_allclose(traj.iterates, ref, rtol=1e-12, atol=1e-12)

    def test_R1_methods_identical(self, default_problem, default_w0):
        a = O.run(default_problem, "sgd", 1, EXACT, O.StepSchedule(ETA), 300, default_w0, RngStream(9))
        b = O.run(default_problem, "gsgd", 1, EXACT, O.StepSchedule(ETA), 300, default_w0, RngStream(9))
        np.testing.assert_array_equal(a.iterates, b.iterates)
        np.testing.assert_array_equal(a.population_losses, b.population_losses)

    def test_realizable_converges(self, default_w0):
        prob = realizable_least_squares()
        for method in ("sgd", "gsgd"):
            final = [
                O.run(prob, method, 8, EXACT, O.StepSchedule(0.9 / prob.L), 500, default_w0, RngStream(s))
                for s in range(20)
            ]
            ratio = np.mean([t.population_losses[-1] for t in final]) / final[0].population_losses[0]
            assert ratio <= 1e-3

    def test_fixed_sample_is_gradient_descent(self):
        prob = fixed_sample_problem([0.6, -0.8], 1.5)
        w0 = np.array([2.0, 1.0])
        eta = 0.4 / prob.L
        w = w0.copy()
        expected = [w]
        for _ in range(50):
            w = w - eta * 2 * (w @ [0.6, -0.8] - 1.5) * np.array([0.6, -0.8])
            expected.append(w)
        for method in ("sgd", "gsgd"):
            for seed in (0, 1, 2):
                t = O.run(prob, method, 4, EXACT, O.StepSchedule(eta), 50, w0, RngStream(seed), record_every=1)
                np.testing.assert_allclose(t.iterates, expected, rtol=1e-14, atol=1e-15)

    def test_accounting(self, default_problem, default_w0):
        t = O.run(default_problem, "gsgd", 7, EXACT, O.StepSchedule(ETA), 333, default_w0, RngStream(1), record_every=10)
        assert t.gradient_evals == 333
        assert t.samples_inspected == 333 * 7
        assert t.steps[0] == 0 and t.steps[-1] == 333 and t.K == 333
        rows = list(t.rows())
        assert rows[-1][3:] == (333, 333 * 7)

    def test_selected_loss_at_least_mean(self, default_problem, default_w0):
        t = O.run(default_problem, "gsgd", 6, EXACT, O.StepSchedule(ETA), 400, default_w0, RngStream(2), record_selection=True)
        assert np.all(t.selected_losses >= t.draw_mean_losses)

    def test_deterministic(self, default_problem, default_w0):
        runs = [O.run(default_problem, "gsgd", 8, EXACT, O.StepSchedule(ETA), 1000, default_w0, RngStream(4)) for _ in range(2)]
        np.testing.assert_array_equal(runs[0].population_losses, runs[1].population_losses)

    def test_step_size_precondition(self, default_problem, default_w0):
        with pytest.raises(ValueError, match="eta < 1/L"):
            O.run(default_problem, "sgd", 2, EXACT, O.StepSchedule(0.5), 10, default_w0, RngStream(0))

    def test_bad_arguments(self, default_problem, default_w0):
        with pytest.raises(ValueError):
            O.run(default_problem, "adam", 2, EXACT, O.StepSchedule(ETA), 10, default_w0, RngStream(0))
        with pytest.raises(ValueError):
            O.run(default_problem, "sgd", 2, EXACT, O.StepSchedule(ETA), 0, default_w0, RngStream(0))
        with pytest.raises(ValueError):
            O.StepSchedule(0.1, kind="cosine")
        with pytest.raises(ValueError):
            O.StepSchedule(0.0)

    def test_divergence_guard(self, default_problem, default_w0):
        with pytest.raises(DivergenceError) as info:
            O._run_batch(default_problem, "gsgd", 4, EXACT, 5.0, 1000, default_w0, [RngStream(0)], 10)
        assert info.value.step >= 1
        assert info.value.norm > 1e6


class TestAveragedIterate:
    def test_examples(self, default_problem, default_w0):
        t = O.run(default_problem, "sgd", 3, EXACT, O.StepSchedule(ETA), 20, default_w0, RngStream(0), record_every=1)
        np.testing.assert_array_equal(O.averaged_iterate(t, 1), default_w0)
        np.testing.assert_allclose(O.averaged_iterate(t, 3), (t.iterates[0] + t.iterates[1] + t.iterates[2]) / 3, rtol=1e-15)
        for k in range(1, 21):
            np.testing.assert_allclose(O.averaged_iterate(t, k), t.averaged_iterates[k], rtol=1e-12)

    def test_constant_trajectory(self):
        prob = fixed_sample_problem([1.0, 0.0], 2.0)
        w0 = np.array([2.0, -3.0])  # already fits the only sample
        t = O.run(prob, "gsgd", 2, EXACT, O.StepSchedule(0.1), 10, w0, RngStream(0), record_every=1)
        for k in range(1, 11):
            np.testing.assert_array_equal(O.averaged_iterate(t, k), w0)

    def test_invalid_k(self, default_problem, default_w0):
        t = O.run(default_problem, "sgd", 3, EXACT, O.StepSchedule(ETA), 20, default_w0, RngStream(0), record_every=1)
        with pytest.raises(ValueError):
            O.averaged_iterate(t, 0)
        with pytest.raises(ValueError):
            O.averaged_iterate(t, 21)

    def test_strided_lookup(self, default_problem, default_w0):
        t = O.run(default_problem, "sgd", 3, EXACT, O.StepSchedule(ETA), 100, default_w0, RngStream(0), record_every=10)
        np.testing.assert_array_equal(O.averaged_iterate(t, 50), t.averaged_iterates[5])
        with pytest.raises(ValueError):
            O.averaged_iterate(t, 55)


class TestRace:
    def test_identical_methods_zero_gap(self, default_problem, default_w0):
        s = O.race(default_problem, 4, EXACT, O.StepSchedule(ETA), 300, default_w0, 5, RngStream(1), methods=("sgd", "sgd"))
        assert np.all(s.gap == 0) and np.all(s.gap_se == 0)
        assert s.column_names() == ["k", "mean_sgd", "se_sgd", "mean_sgd_2", "se_sgd_2", "gap", "se_gap"]

    def test_replicates_match_single_runs(self, default_problem, default_w0):
        rng = RngStream(6)
        s = O.race(default_problem, 4, EXACT, O.StepSchedule(ETA), 200, default_w0, 3, rng, record_every=20)
        for i, stream in enumerate(rng.substreams(3)):
            t = O.run(default_problem, "gsgd", 4, EXACT, O.StepSchedule(ETA), 200, default_w0, stream, record_every=20)
            np.testing.assert_array_equal(s.losses["gsgd"][i], t.averaged_losses)
            np.testing.assert_array_equal(s.iterate_losses["gsgd"][i], t.population_losses)

    def test_workers_do_not_change_results(self, default_problem, default_w0):
        args = (default_problem, 4, EXACT, O.StepSchedule(ETA), 200, default_w0, 7)
        a = O.race(*args, RngStream(2), workers=1)
        b = O.race(*args, RngStream(2), workers=3)
        for slot in ("sgd", "gsgd"):
            np.testing.assert_array_equal(a.losses[slot], b.losses[slot])

    def test_early_advantage_small(self, default_problem, default_w0):
        s = O.race(default_problem, 8, EXACT, O.StepSchedule(ETA), 200, default_w0, 50, RngStream(8), record_every=10)
        z = s.gap[1:] / s.gap_se[1:]
        assert z.max() > 3

    def test_needs_two_seeds(self, default_problem, default_w0):
        with pytest.raises(ValueError):
            O.race(default_problem, 4, EXACT, O.StepSchedule(ETA), 20, default_w0, 1, RngStream(0))

    def test_at(self, default_problem, default_w0):
        s = O.race(default_problem, 2, EXACT, O.StepSchedule(ETA), 100, default_w0, 2, RngStream(0), record_every=25)
        assert s.at(75) == 3
        with pytest.raises(KeyError):
            s.at(74)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 400), st.integers(1, 60))
def test_record_steps_cover_endpoints(K, every):
    steps = O.record_steps(K, every)
    assert steps[0] == 0 and steps[-1] == K
    assert np.all(np.diff(steps) > 0)
    assert np.all(np.diff(steps)[:-1] == every)
