"""Orthogonal-network optimization: tangent projection, QR retraction,
range distance, full runs, and batched trials."""

import numpy as np
import pytest

from initgd import (GdConfig, LayerStack, ProblemInstance, RngSpec, Termination,
                    default_riemannian_alpha, orthogonality_defect, qr_retract,
                    random_orthogonal, random_problem, range_distance,
                    riemannian_step, run_riemannian, run_trials,
                    tangent_project)
from initgd.exceptions import RankDeficientError
from initgd.hidden import draw_unit
from initgd.stiefel import _init_stack

DEMO_SYSTEM = ProblemInstance([[5.0, -3.0, 1.0], [3.0, 1.0, -1.0]], [6.0, 4.0])


class TestTangentProject:
    def test_normal_direction_removed(self):
        W = random_orthogonal(4, RngSpec(0))
        np.testing.assert_allclose(tangent_project(W, W), 0.0, atol=1e-14)

    def test_tangent_input_unchanged(self):
        W = random_orthogonal(4, RngSpec(1))
        Omega = np.array([[0.0, 1.0, -2.0, 0.5],
                          [-1.0, 0.0, 3.0, -0.25],
                          [2.0, -3.0, 0.0, 1.0],
                          [-0.5, 0.25, -1.0, 0.0]])
        G = W @ Omega
        np.testing.assert_allclose(tangent_project(W, G), G, atol=1e-12)

    def test_skew_part_at_identity(self):
        G = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = tangent_project(np.eye(2), G)
        np.testing.assert_allclose(out, [[0.0, -0.5], [0.5, 0.0]], atol=1e-14)

    def test_idempotent_and_tangent_condition(self):
        gen = np.random.default_rng(2)
        for seed in range(20):
            W = random_orthogonal(5, RngSpec(seed, 9))
            G = gen.standard_normal((5, 5))
            xi = tangent_project(W, G)
            np.testing.assert_allclose(tangent_project(W, xi), xi, atol=1e-12)
            assert np.linalg.norm(W @ xi.T + xi @ W.T) <= 1e-10


class TestQrRetract:
    def test_zero_step_is_identity_map(self):
        W = random_orthogonal(4, RngSpec(3))
        out = qr_retract(W, np.zeros((4, 4)))
        np.testing.assert_array_equal(out, W)

    def test_output_orthogonal(self):
        gen = np.random.default_rng(4)
        for seed in range(10):
            W = random_orthogonal(6, RngSpec(seed, 10))
            xi = tangent_project(W, gen.standard_normal((6, 6)))
            assert orthogonality_defect(qr_retract(W, xi)) <= 1e-12

    def test_small_rotation_first_order(self):
        # retraction of a skew step at the identity approximates the exact
        # rotation to second order in the step size
        t = 1e-3
        xi = np.array([[0.0, -t], [t, 0.0]])
        out = qr_retract(np.eye(2), xi)
        exact = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        assert np.linalg.norm(out - exact) <= 5 * t**2


class TestRangeDistance:
    def test_three_by_two_case(self):
        W = random_orthogonal(3, RngSpec(5))
        M = np.random.default_rng(6).standard_normal((3, 2))
        assert range_distance(W, M) == pytest.approx(1.0, abs=1e-10)

    def test_square_full_rank_gives_zero(self):
        W = random_orthogonal(4, RngSpec(7))
        M = np.random.default_rng(8).standard_normal((4, 4))
        assert range_distance(W, M) <= 1e-10

    def test_formula_value(self):
        W = random_orthogonal(10, RngSpec(9))
        M = np.random.default_rng(10).standard_normal((10, 3))
        assert range_distance(W, M) == pytest.approx(np.sqrt(7.0), abs=1e-10)

    def test_rank_deficient_rejected(self):
        W = random_orthogonal(4, RngSpec(11))
        M = np.ones((4, 2))
        with pytest.raises(RankDeficientError):
            range_distance(W, M)

    def test_sqrt_d_minus_n_on_grid(self):
        gen = np.random.default_rng(12)
        for d in (2, 5, 17, 50):
            for n in (1, d // 2, d - 1):
                if n < 1 or n >= d:
                    continue
                for _ in range(10):
                    W = random_orthogonal(d, RngSpec(int(gen.integers(1 << 30))))
                    M = gen.standard_normal((d, n))
                    assert range_distance(W, M) == pytest.approx(
                        np.sqrt(d - n), abs=1e-10)


class TestRiemannianStep:
    def test_zero_residual_leaves_state_fixed(self):
        p = DEMO_SYSTEM
        # build an interpolating orthogonal state: W = I (orthogonal),
        # x = theta_star
        stack = LayerStack((np.eye(3),), p.theta_star.copy())
        out = riemannian_step(stack, p, 0.01)
        np.testing.assert_allclose(out.weights[0], np.eye(3), atol=1e-12)
        np.testing.assert_allclose(out.x, p.theta_star, atol=1e-12)

    def test_orthogonality_preserved(self):
        p = random_problem(3, 6, 2.0, RngSpec(13))
        stack = _init_stack(RngSpec(14).generator(), p.d, 3)
        out = riemannian_step(stack, p, 0.05 / p.spectral_norm**2)
        for W in out.weights:
            assert orthogonality_defect(W) <= 1e-12

    def test_loss_non_increasing_at_tiny_step(self):
        # smoke check, not a theorem: conservative steps should not
        # increase the loss on small random instances
        for seed in range(5):
            p = random_problem(3, 7, 2.0, RngSpec(seed, 11))
            stack = _init_stack(RngSpec(seed, 12).generator(), p.d, 2)
            alpha = 1e-3 / p.spectral_norm**2
            prev = np.linalg.norm(p.A @ stack.effective() - p.b)
            for _ in range(50):
                stack = riemannian_step(stack, p, alpha)
                cur = np.linalg.norm(p.A @ stack.effective() - p.b)
                assert cur <= prev + 1e-12
                prev = cur


class TestRunRiemannian:
    def test_invariants_along_full_run(self):
        p = DEMO_SYSTEM
        s, trace = run_riemannian(p, 3, GdConfig(max_iters=2000), RngSpec(15))
        for W in s.weights:
            assert orthogonality_defect(W) <= 1e-8
            sv = np.linalg.svd(W, compute_uv=False)
            assert abs(sv[0] - 1.0) <= 1e-8
        prod = np.prod([np.linalg.norm(W, 2) for W in s.weights])
        assert abs(prod - 1.0) <= 1e-8

    def test_seed_dependent_limits(self):
        # some seeds land on the minimum-norm solution, others on a
        # different interpolant (exact hits are rare; trial 6 of this
        # stream was found by scanning 400 trials at depth 6)
        p = DEMO_SYSTEM
        cfg = GdConfig(max_iters=6000)
        s, _ = run_riemannian(p, 6, cfg, RngSpec(99).substream(6))
        assert np.linalg.norm(s.effective() - p.theta_star) <= 1e-4
        s, trace = run_riemannian(p, 6, cfg, RngSpec(99).substream(0))
        assert trace.terminated_by is Termination.RESIDUAL
        assert np.linalg.norm(s.effective() - p.theta_star) > 1e-2

    def test_depth_scaled_default_step(self):
        p = DEMO_SYSTEM
        assert default_riemannian_alpha(p, 1) == pytest.approx(
            1.0 / (2 * p.spectral_norm**2))
        assert default_riemannian_alpha(p, 5) == pytest.approx(
            1.0 / (6 * p.spectral_norm**2))


class TestRunTrials:
    def test_single_trial_stats(self):
        p = DEMO_SYSTEM
        stats = run_trials(p, [1], 1, GdConfig(max_iters=1500), RngSpec(16))
        st = stats[1]
        assert st.distances.shape == (1,)
        assert st.percentiles[25] == st.percentiles[50] == st.percentiles[75]
        assert st.histogram[1].sum() == 1

    def test_matches_single_run_per_trial(self):
        p = DEMO_SYSTEM
        base = RngSpec(17)
        cfg = GdConfig(max_iters=1500)
        stats = run_trials(p, [2], 4, cfg, base)
        for t in range(4):
            s, trace = run_riemannian(p, 2, cfg, base.substream(t))
            np.testing.assert_allclose(
                stats[2].distances[t],
                np.linalg.norm(s.effective() - p.theta_star),
                rtol=1e-10, atol=1e-12)

    def test_deterministic_reruns(self):
        p = DEMO_SYSTEM
        cfg = GdConfig(max_iters=800)
        a = run_trials(p, [1, 3], 32, cfg, RngSpec(18))
        b = run_trials(p, [1, 3], 32, cfg, RngSpec(18))
        for h in (1, 3):
            np.testing.assert_array_equal(a[h].distances, b[h].distances)
            assert a[h].percentiles == b[h].percentiles

    def test_chunking_invariance(self):
        p = DEMO_SYSTEM
        cfg = GdConfig(max_iters=600)
        a = run_trials(p, [1], 10, cfg, RngSpec(19), chunk_size=3)
        b = run_trials(p, [1], 10, cfg, RngSpec(19), chunk_size=512)
        np.testing.assert_allclose(a[1].distances, b[1].distances,
                                   rtol=1e-12, atol=1e-14)

    def test_histogram_counts_sum_to_trials(self):
        p = DEMO_SYSTEM
        stats = run_trials(p, [1], 25, GdConfig(max_iters=800), RngSpec(20))
        assert stats[1].histogram[1].sum() == 25
        pct = stats[1].percentiles
        assert pct[25] <= pct[50] <= pct[75]
