"""Riemannian gradient descent for orthogonal linear networks.

Hidden weights live on the square Stiefel manifold {W : W W^T = I_d} and
are updated by projecting the Euclidean gradient onto the tangent space
and retracting with a QR factorization; the outer vector x stays
unconstrained. Because every hidden weight is orthogonal, the product of
hidden spectral norms is pinned at one, and no orthogonal first layer can
sit in the row space of A: its kernel part always has Frobenius norm
sqrt(d - n).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .deep import LayerStack, deep_gradients
from .exceptions import RankDeficientError, SingularStepError
from .hidden import draw_unit
from .iterate import DIVERGENCE_FACTOR, GdConfig, IterateTrace, Termination
from .linalg import RANK_TOL, ProblemInstance, haar_orthogonal
from .rng import RngSpec


def orthogonality_defect(W) -> float:
    """Frobenius distance of W W^T from the identity."""
    W = np.asarray(W, dtype=float)
    return float(np.linalg.norm(W @ W.T - np.eye(W.shape[0])))


def tangent_project(W, G) -> np.ndarray:
    """Project a Euclidean gradient onto the tangent space at orthogonal W.

    Returns G - W sym(W^T G) with sym(M) = (M + M^T)/2; the result xi
    satisfies the tangent condition W xi^T + xi W^T = 0.
    """
    W = np.asarray(W, dtype=float)
    G = np.asarray(G, dtype=float)
    M = W.T @ G
    return G - W @ ((M + M.T) / 2.0)


def qr_retract(W, xi) -> np.ndarray:
    """Map a tangent step back onto the manifold: Q factor of W + xi with
    the R diagonal forced positive (which makes Q unique).

    A zero step returns W unchanged.
    """
    W = np.asarray(W, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if not np.any(xi):
        return W
    Q, R = np.linalg.qr(W + xi)
    diag = np.diagonal(R)
    if np.any(diag == 0.0) or not np.all(np.isfinite(diag)):
        raise SingularStepError("W + xi is rank deficient; QR factor not unique")
    sign = np.sign(diag).copy()
    return Q * sign


def riemannian_step(s: LayerStack, p: ProblemInstance, alpha: float) -> LayerStack:
    """One Riemannian descent step: every hidden weight moves along the
    negative projected gradient and is retracted; x takes a plain
    Euclidean step. Euclidean gradients are the deep-network ones.
    """
    grads, gx, _ = deep_gradients(s, p)
    weights = tuple(
        qr_retract(W, -alpha * tangent_project(W, G))
        for W, G in zip(s.weights, grads)
    )
    return LayerStack(weights=weights, x=s.x - alpha * gx)


def range_distance(W, M) -> float:
    """Frobenius distance of W from the column space of a full-column-rank
    M: ||M M^+ W - W||_F. Equals sqrt(d - n) for every orthogonal d x d W
    and d x n M.
    """
    W = np.asarray(W, dtype=float)
    M = np.asarray(M, dtype=float)
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] <= RANK_TOL * sv[0]:
        raise RankDeficientError("M must have full column rank")
    coeff = np.linalg.lstsq(M, W, rcond=None)[0]
    return float(np.linalg.norm(M @ coeff - W))


def default_riemannian_alpha(p: ProblemInstance, h: int) -> float:
    """Depth-aware safe step 1 / ((h + 1) ||A||^2).

    The plain 1/||A||^2 step settles into period-2 limit cycles for h >= 3
    (the coupled curvature grows with depth); dividing by h + 1 restores
    convergence at every depth used here.
    """
    return 1.0 / ((h + 1) * p.spectral_norm**2)


def _init_stack(gen: np.random.Generator, d: int, h: int) -> LayerStack:
    weights = tuple(haar_orthogonal(gen, d) for _ in range(h))
    return LayerStack(weights=weights, x=draw_unit(gen, d))


def run_riemannian(p: ProblemInstance, h: int, cfg: GdConfig = GdConfig(),
                   rng: Optional[RngSpec] = None,
                   s0: Optional[LayerStack] = None
                   ) -> tuple[LayerStack, IterateTrace]:
    """Riemannian descent from random orthogonal hidden weights and a
    random unit x (or an explicit starting stack).

    The final state is returned whether or not the run converged; the
    trace records residual and distance to the minimum-norm solution.
    """
    if h < 1:
        raise ValueError("need at least one hidden layer")
    if s0 is None:
        if rng is None:
            raise ValueError("rng is required when s0 is not given")
        s0 = _init_stack(rng.generator(), p.d, h)
    s = LayerStack(weights=tuple(np.array(W, dtype=float) for W in s0.weights),
                   x=np.array(s0.x, dtype=float))
    alpha = cfg.alpha if cfg.alpha is not None else default_riemannian_alpha(p, h)
    theta_star = p.theta_star
    norm_b = np.linalg.norm(p.b)
    res_target = cfg.tol_residual * max(norm_b, 1.0)
    div_bound = DIVERGENCE_FACTOR * max(norm_b, 1.0)
    trace = IterateTrace(method="riemann")
    for k in range(cfg.max_iters + 1):
        y_eff = s.effective()
        res = float(np.linalg.norm(p.A @ y_eff - p.b))
        if not np.isfinite(res):
            trace.terminated_by = Termination.DIVERGED
            break
        trace.append(k, res, np.linalg.norm(y_eff - theta_star))
        if cfg.snapshot_every and k % cfg.snapshot_every == 0:
            trace.snapshot(k, y_eff)
        if res > div_bound:
            trace.terminated_by = Termination.DIVERGED
            break
        if res <= res_target:
            trace.terminated_by = Termination.RESIDUAL
            break
        if k == cfg.max_iters:
            trace.terminated_by = Termination.MAX_ITERS
            break
        s = riemannian_step(s, p, alpha)
    return s, trace


@dataclass(frozen=True)
class TrialStats:
    """Final-distance statistics over a batch of independent trials."""

    distances: np.ndarray
    percentiles: dict[int, float]
    histogram: tuple[np.ndarray, np.ndarray]
    variance: float
    n_diverged: int

    def frac_within(self, tol: float) -> float:
        return float(np.mean(self.distances <= tol))


def _batch_qr_positive(M: np.ndarray) -> np.ndarray:
    Q, R = np.linalg.qr(M)
    sign = np.sign(np.einsum("...ii->...i", R))
    sign[sign == 0] = 1.0
    return Q * sign[..., None, :]


def _run_trial_batch(p: ProblemInstance, h: int, W: np.ndarray, x: np.ndarray,
                     alpha: float, cfg: GdConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Riemannian descent over a batch of trials.

    Each trial follows exactly the single-run update rule; converged or
    diverged trials are frozen and excluded from further work. Returns
    (final distances, diverged flags).
    """
    theta_star = p.theta_star
    A = p.A
    norm_b = np.linalg.norm(p.b)
    res_target = cfg.tol_residual * max(norm_b, 1.0)
    div_bound = DIVERGENCE_FACTOR * max(norm_b, 1.0)
    T = W.shape[0]
    active = np.ones(T, dtype=bool)
    final_dist = np.empty(T)
    diverged = np.zeros(T, dtype=bool)

    def record(sel_idx, y_eff):
        final_dist[sel_idx] = np.linalg.norm(y_eff - theta_star, axis=1)

    for k in range(cfg.max_iters + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Wa, xa = W[idx], x[idx]
        suf = [None] * (h + 1)
        suf[h] = xa
        for j in range(h - 1, -1, -1):
            suf[j] = np.matmul(Wa[:, j], suf[j + 1][:, :, None])[:, :, 0]
        r = suf[0] @ A.T - p.b
        res = np.linalg.norm(r, axis=1)
        bad = ~np.isfinite(res) | (res > div_bound)
        done = bad | (res <= res_target) | (k == cfg.max_iters)
        if np.any(done):
            record(idx[done], np.nan_to_num(suf[0][done], nan=np.inf,
                                            posinf=np.inf, neginf=-np.inf))
            diverged[idx[done]] = bad[done]
            active[idx[done]] = False
            keep = ~done
            idx, Wa, xa, r = idx[keep], Wa[keep], xa[keep], r[keep]
            suf = [sf[keep] for sf in suf]
            if idx.size == 0:
                break
        g = r @ A
        Wnew = np.empty_like(Wa)
        for j in range(h):
            G = g[:, :, None] * suf[j + 1][:, None, :]
            M = np.matmul(Wa[:, j].transpose(0, 2, 1), G)
            xi = G - np.matmul(Wa[:, j], (M + M.transpose(0, 2, 1)) / 2.0)
            Wnew[:, j] = _batch_qr_positive(Wa[:, j] - alpha * xi)
            g = np.matmul(Wa[:, j].transpose(0, 2, 1), g[:, :, None])[:, :, 0]
        W[idx] = Wnew
        x[idx] = xa - alpha * g
    return final_dist, diverged


def run_trials(p: ProblemInstance, h_list: Sequence[int], trials: int,
               cfg: GdConfig, rng: RngSpec,
               chunk_size: int = 512) -> dict[int, TrialStats]:
    """Independent Riemannian trials for each depth in ``h_list``.

    Trial t draws its initialization from the child stream
    ``rng.substream(t)`` (weights first, then x), so results are
    deterministic and independent of batching; trials are evaluated in
    vectorized chunks and merged by trial index. Individual divergence is
    recorded, not fatal.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    out = {}
    for h in h_list:
        alpha = cfg.alpha if cfg.alpha is not None else default_riemannian_alpha(p, h)
        dists = np.empty(trials)
        div = np.zeros(trials, dtype=bool)
        for start in range(0, trials, chunk_size):
            stop = min(start + chunk_size, trials)
            T = stop - start
            W = np.empty((T, h, p.d, p.d))
            x = np.empty((T, p.d))
            for t in range(T):
                gen = rng.substream(start + t).generator()
                for j in range(h):
                    W[t, j] = haar_orthogonal(gen, p.d)
                x[t] = draw_unit(gen, p.d)
            dists[start:stop], div[start:stop] = _run_trial_batch(
                p, h, W, x, alpha, cfg)
        finite = dists[np.isfinite(dists)]
        stats_base = finite if finite.size else np.array([np.inf])
        percentiles = {q: float(np.percentile(stats_base, q)) for q in (25, 50, 75)}
        if finite.size:
            counts, edges = np.histogram(finite, bins=30)
        else:
            counts, edges = np.zeros(1, dtype=int), np.array([0.0, 1.0])
        out[h] = TrialStats(
            distances=dists,
            percentiles=percentiles,
            histogram=(edges, counts),
            variance=float(np.var(stats_base)),
            n_diverged=int(np.sum(div)),
        )
    return out
