"""Depth-h networks: gradient correctness, structured initialization,
coupled-form conservation, the two-layer collapse, kernel-part stability,
and baseline initializers."""

import numpy as np
import pytest

from initgd import (GdConfig, HiddenPair, LayerStack, ProblemInstance, RngSpec,
                    Termination, baseline_init, check_bioptimality2,
                    check_coupled_outer, coupled_init, gd_step_deep,
                    gd_step_hidden, random_problem, run_compact2, run_deep,
                    stability_bound, stability_decompose)
from initgd.deep import deep_gradients
from initgd.exceptions import ConstructionFailedError, ZeroXError
from initgd.experiments import kernel_perturbed_init, run_stability_experiment
from initgd.hidden import draw_unit, draw_v

ROW = ProblemInstance([[1.0, 1.0]], [2.0])


def loss(stack, p):
    return 0.5 * np.linalg.norm(p.A @ stack.effective() - p.b) ** 2


def numeric_gradients(stack, p, eps=1e-6):
    """Central finite differences of the loss in every parameter."""
    gW = []
    for j, W in enumerate(stack.weights):
        G = np.zeros_like(W)
        for a in range(W.shape[0]):
            for c in range(W.shape[1]):
                Wp = [w.copy() for w in stack.weights]
                Wm = [w.copy() for w in stack.weights]
                Wp[j][a, c] += eps
                Wm[j][a, c] -= eps
                G[a, c] = (loss(LayerStack(tuple(Wp), stack.x), p)
                           - loss(LayerStack(tuple(Wm), stack.x), p)) / (2 * eps)
        gW.append(G)
    gx = np.zeros_like(stack.x)
    for c in range(stack.x.shape[0]):
        xp, xm = stack.x.copy(), stack.x.copy()
        xp[c] += eps
        xm[c] -= eps
        gx[c] = (loss(LayerStack(stack.weights, xp), p)
                 - loss(LayerStack(stack.weights, xm), p)) / (2 * eps)
    return gW, gx


class TestDeepGradients:
    def test_matches_finite_differences(self):
        p = random_problem(3, 6, 2.0, RngSpec(0))
        gen = np.random.default_rng(1)
        stack = LayerStack(tuple(gen.standard_normal((p.d, p.d)) / np.sqrt(p.d)
                                 for _ in range(3)),
                           gen.standard_normal(p.d))
        gW, gx, _ = deep_gradients(stack, p)
        nW, nx = numeric_gradients(stack, p)
        for analytic, numeric in zip(gW, nW):
            np.testing.assert_allclose(analytic, numeric, atol=5e-6)
        np.testing.assert_allclose(gx, nx, atol=5e-6)

    def test_zero_stack_is_a_saddle(self):
        p = random_problem(3, 6, 2.0, RngSpec(2))
        stack = LayerStack(tuple(np.zeros((p.d, p.d)) for _ in range(2)),
                           np.zeros(p.d))
        out = gd_step_deep(stack, p, 0.1)
        for W in out.weights:
            np.testing.assert_array_equal(W, 0.0)
        np.testing.assert_array_equal(out.x, 0.0)

    def test_depth_one_matches_hidden_step(self):
        p = random_problem(4, 9, 3.0, RngSpec(3))
        gen = np.random.default_rng(4)
        W = gen.standard_normal((p.d, p.d))
        x = gen.standard_normal(p.d)
        deep_out = gd_step_deep(LayerStack((W,), x), p, 0.07)
        hidden_out = gd_step_hidden(HiddenPair(W=W, x=x), p, 0.07)
        np.testing.assert_allclose(deep_out.weights[0], hidden_out.W,
                                   rtol=1e-14, atol=1e-14)
        np.testing.assert_allclose(deep_out.x, hidden_out.x, rtol=1e-14, atol=1e-14)


class TestCoupledInit:
    def test_hand_example(self):
        # v = (1): x = A^T v / ||A^T v||^2 = (1/2, 1/2), first column A^T v
        stack, v, u = coupled_init(ROW, v=np.array([1.0]))
        np.testing.assert_allclose(stack.x, [0.5, 0.5], atol=1e-15)
        np.testing.assert_array_equal(stack.weights[0], [[1.0, 0.0], [1.0, 0.0]])

    def test_second_layer_is_first_row_only(self):
        p = random_problem(4, 11, 3.0, RngSpec(5))
        stack, v, u = coupled_init(p, RngSpec(6))
        W2 = stack.weights[1]
        np.testing.assert_allclose(W2[0], stack.x, atol=1e-12)
        assert np.all(W2[1:] == 0.0)

    def test_unit_pairing_of_v_and_u(self):
        p = random_problem(4, 11, 3.0, RngSpec(7))
        stack, v, u = coupled_init(p, RngSpec(8))
        pairing = float((p.A.T @ v) @ (p.A.T @ u))
        assert abs(pairing - 1.0) <= 1e-12

    def test_drawn_v_gives_unit_x(self):
        p = random_problem(4, 11, 3.0, RngSpec(9))
        stack, v, u = coupled_init(p, RngSpec(10))
        assert abs(np.linalg.norm(stack.x) - 1.0) <= 1e-12

    def test_rejects_zero_v(self):
        with pytest.raises(ValueError):
            coupled_init(ROW, v=np.zeros(1))


class TestSparsityConservation:
    def test_one_step_keeps_column_and_row_patterns(self):
        p = random_problem(4, 10, 2.0, RngSpec(11))
        stack, v, u = coupled_init(p, RngSpec(12))
        out = gd_step_deep(stack, p, 0.2 / p.spectral_norm**2)
        assert np.all(out.weights[0][:, 1:] == 0.0)
        assert np.all(out.weights[1][1:, :] == 0.0)

    def test_patterns_exact_along_run(self):
        p = random_problem(4, 10, 2.0, RngSpec(13))
        s, v, u = coupled_init(p, RngSpec(14))
        alpha = 0.2 / p.spectral_norm**2
        for k in range(200):
            s = gd_step_deep(s, p, alpha)
            assert np.all(s.weights[0][:, 1:] == 0.0)
            assert np.all(s.weights[1][1:, :] == 0.0)
            np.testing.assert_allclose(s.weights[1][0], s.x,
                                       atol=1e-10 * max(np.linalg.norm(s.x), 1.0))


class TestCoupledOuterForm:
    def test_exact_at_initialization(self):
        p = random_problem(4, 12, 2.0, RngSpec(15))
        stack, v, u = coupled_init(p, RngSpec(16))
        w = check_coupled_outer(stack, p)
        assert max(w.residual_w1, w.residual_w2, w.residual_x) <= 1e-12

    def test_conserved_along_trajectory(self):
        p = random_problem(4, 12, 2.0, RngSpec(17))
        s, v, u = coupled_init(p, RngSpec(18))
        alpha = 0.2 / p.spectral_norm**2
        for _ in range(500):
            s = gd_step_deep(s, p, alpha)
        w = check_coupled_outer(s, p)
        scale = max(np.linalg.norm(s.weights[0]), np.linalg.norm(s.weights[1]), 1.0)
        assert max(w.residual_w1, w.residual_w2, w.residual_x) <= 1e-7 * scale

    def test_random_stack_fails_the_form(self):
        p = random_problem(3, 8, 2.0, RngSpec(19))
        gen = np.random.default_rng(20)
        stack = LayerStack((gen.standard_normal((p.d, p.d)),
                            gen.standard_normal((p.d, p.d))),
                           gen.standard_normal(p.d))
        w = check_coupled_outer(stack, p)
        assert w.residual_w1 > 1e-3

    def test_zero_x_raises(self):
        p = random_problem(3, 8, 2.0, RngSpec(21))
        stack = LayerStack((np.eye(p.d), np.eye(p.d)), np.zeros(p.d))
        with pytest.raises(ZeroXError):
            check_coupled_outer(stack, p)


class TestTwoLayerCollapse:
    def test_tracks_full_trajectory(self):
        for seed in range(5):
            p = random_problem(5, 14, 3.0, RngSpec(seed, 7))
            v0 = draw_v(RngSpec(50 + seed).generator(), p)
            stack, v, u = coupled_init(p, v=v0)
            cfg = GdConfig(alpha=0.25 / p.spectral_norm**2, max_iters=50,
                           tol_residual=0.0)
            s_full, tr_full = run_deep(stack, p, cfg)
            theta, tr_c = run_compact2(p, cfg, v=v0)
            assert len(tr_full) == len(tr_c)
            scale = 1.0 + np.abs(tr_full.distances).max()
            assert np.abs(tr_full.distances - tr_c.distances).max() <= 1e-8 * scale
            np.testing.assert_allclose(theta, s_full.effective(), atol=1e-8)

    def test_converges_to_min_norm(self):
        p = random_problem(5, 15, 3.0, RngSpec(22))
        cfg = GdConfig(alpha=0.25 / p.spectral_norm**2, max_iters=300_000,
                       tol_residual=1e-12)
        theta, trace = run_compact2(p, cfg, RngSpec(23))
        assert trace.terminated_by is Termination.RESIDUAL
        assert (np.linalg.norm(theta - p.theta_star)
                <= 1e-6 * np.linalg.norm(p.theta_star))

    def test_matched_rng_draws_same_v(self):
        p = random_problem(4, 10, 2.0, RngSpec(24))
        stack, v, u = coupled_init(p, RngSpec(25))
        theta, trace = run_compact2(p, GdConfig(max_iters=1, tol_residual=float("inf")),
                                    rng=RngSpec(25))
        np.testing.assert_allclose(theta, stack.effective(), atol=1e-12)


class TestBioptimalityTwo:
    def converged_stack(self, seed=26):
        p = random_problem(4, 12, 2.0, RngSpec(seed))
        stack, v, u = coupled_init(p, RngSpec(seed + 1))
        cfg = GdConfig(alpha=0.25 / p.spectral_norm**2, max_iters=300_000,
                       tol_residual=1e-12)
        s, trace = run_deep(stack, p, cfg)
        assert trace.terminated_by is Termination.RESIDUAL
        return p, s

    def test_all_four_residuals_small(self):
        p, s = self.converged_stack()
        report = check_bioptimality2(s, p, 1e-6)
        assert report.all_passed, report.residuals

    def test_kernel_perturbed_first_layer_fails_statement_one(self):
        p, s = self.converged_stack(seed=28)
        V2 = p.split.V2
        E = np.outer(V2[:, 0], np.eye(p.d)[0])
        W1 = s.weights[0] + E
        # rebalance x so the perturbed stack still interpolates
        stack = LayerStack((W1, s.weights[1]), s.x)
        y = stack.effective()
        scale_fix = np.linalg.lstsq((p.A @ y)[:, None], p.b, rcond=None)[0][0]
        stack = LayerStack((W1, s.weights[1]), s.x * scale_fix)
        if np.linalg.norm(p.A @ stack.effective() - p.b) <= 1e-6:
            report = check_bioptimality2(stack, p, 1e-5)
            assert report.residuals[0] > 1e-4

    def test_square_identity_case_degenerates(self):
        # d = n square: statements reduce to the plain solve; the product
        # equals the unique solution only when x does.
        A = np.array([[2.0, 0.0], [0.0, 3.0]])
        p = ProblemInstance(A, np.array([2.0, 3.0]))
        x = np.linalg.solve(A, p.b)
        stack = LayerStack((np.eye(2), np.eye(2)), x)
        report = check_bioptimality2(stack, p, 1e-8)
        assert report.residuals[0] <= 1e-10


class TestStability:
    def test_rowspace_first_layer_has_zero_kernel_part(self):
        p = random_problem(4, 10, 2.0, RngSpec(30))
        W1 = p.A.T @ np.random.default_rng(31).standard_normal((p.n, p.d))
        dec = stability_decompose(W1, p)
        assert np.linalg.norm(dec.C) <= 1e-10 * np.linalg.norm(W1)
        np.testing.assert_allclose(p.A.T @ dec.P + dec.C, W1, atol=1e-12)

    def test_recovers_constructed_kernel_part(self):
        p = random_problem(4, 10, 2.0, RngSpec(32))
        gen = np.random.default_rng(33)
        P0 = gen.standard_normal((p.n, p.d))
        C0 = p.split.V2 @ gen.standard_normal((p.d - p.n, p.d))
        dec = stability_decompose(p.A.T @ P0 + C0, p)
        np.testing.assert_allclose(dec.C, C0, atol=1e-10)
        assert np.linalg.norm(p.A @ dec.C) <= 1e-12 * np.linalg.norm(p.A) * max(
            np.linalg.norm(dec.C), 1e-30)

    @pytest.mark.parametrize("h", [1, 2, 3, 5])
    def test_kernel_part_constant_under_training(self, h):
        p = random_problem(4, 10, 2.0, RngSpec(34))
        s0, C0 = kernel_perturbed_init(p, h, RngSpec(35))
        alpha = 0.1 / p.spectral_norm**2
        s = s0
        for _ in range(100):
            s = gd_step_deep(s, p, alpha)
            C = stability_decompose(s.weights[0], p).C
            assert np.linalg.norm(C - C0) <= 1e-10

    def test_bound_zero_kernel_part(self):
        p = random_problem(3, 8, 2.0, RngSpec(36))
        stack = LayerStack((np.eye(p.d), np.eye(p.d)), np.ones(p.d))
        assert stability_bound(stack, np.zeros((p.d, p.d))) == 0.0

    def test_bound_with_orthogonal_layers_is_kernel_norm(self):
        p = random_problem(3, 8, 2.0, RngSpec(37))
        from initgd import random_orthogonal
        W2 = random_orthogonal(p.d, RngSpec(38))
        x = draw_unit(np.random.default_rng(39), p.d)
        C = p.split.V2 @ np.random.default_rng(40).standard_normal((p.d - p.n, p.d))
        stack = LayerStack((np.eye(p.d), W2), x)
        assert stability_bound(stack, C) == pytest.approx(np.linalg.norm(C, 2))

    def test_bound_dominates_actual_distance_at_convergence(self):
        p = random_problem(4, 12, 2.0, RngSpec(41))
        cfg = GdConfig(alpha=0.1 / p.spectral_norm**2, max_iters=300_000,
                       tol_residual=1e-12)
        run = run_stability_experiment(p, 3, cfg, RngSpec(42), check_every=50)
        assert run.trace.terminated_by is Termination.RESIDUAL
        assert run.kernel_drift_max <= 1e-10
        assert run.bound + 1e-8 >= run.dist_theta_star


class TestBaselineInit:
    def test_xavier_entry_range(self):
        s = baseline_init(4, 2, "xavier", RngSpec(43))
        for W in s.weights:
            assert np.all(np.abs(W) <= 0.5)

    def test_he_variance(self):
        gen_stack = baseline_init(8, 4, "he", RngSpec(44))
        entries = np.concatenate([W.ravel() for W in gen_stack.weights])
        # 4 * 64 entries is small; draw more via repeated seeds
        more = [baseline_init(8, 4, "he", RngSpec(44, k)).weights for k in range(100)]
        entries = np.concatenate([entries] + [W.ravel() for ws in more for W in ws])
        assert entries.size >= 1e5 * 0.25
        assert abs(np.var(entries) - 0.25) <= 0.05 * 0.25

    def test_identity_predictor_is_x(self):
        s = baseline_init(5, 3, "identity", RngSpec(45))
        np.testing.assert_allclose(s.effective(), s.x, atol=1e-15)
        assert abs(np.linalg.norm(s.x) - 1.0) <= 1e-12

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            baseline_init(4, 1, "lecun", RngSpec(0))
