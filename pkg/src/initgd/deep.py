"""Depth-h linear networks 1/2 ||A W_1 ... W_h x - b||^2.

General-depth simultaneous gradient steps (prefix/suffix caching, O(h)
matrix-vector products per step), the coupled rank-one initialization that
makes the h=2 trajectory collapsible to n + 2 numbers, the kernel-part
decomposition W_1 = A^T P + C whose C never moves under training, the
product-of-norms error bound it implies, and standard baseline
initializers for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .exceptions import (ConstructionFailedError, GammaSingularError,
                         NotInterpolantError, ZeroXError)
from .hidden import GAMMA_GUARD, BioptReport, CompactState, draw_unit, draw_v
from .iterate import DIVERGENCE_FACTOR, GdConfig, IterateTrace, Termination
from .linalg import ProblemInstance
from .rng import RngSpec


@dataclass(frozen=True)
class LayerStack:
    """Hidden weights W_1 ... W_h (each d x d) plus the outer vector x."""

    weights: tuple[np.ndarray, ...]
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))

    @property
    def h(self) -> int:
        return len(self.weights)

    @property
    def d(self) -> int:
        return self.x.shape[0]

    def effective(self) -> np.ndarray:
        """Effective predictor W_1 ... W_h x."""
        y = self.x
        for W in reversed(self.weights):
            y = W @ y
        return y


@dataclass(frozen=True)
class StabilityDecomposition:
    """W_1 = A^T P + C with A C = 0; C is invariant under training."""

    P: np.ndarray
    C: np.ndarray


class CoupledWitness(NamedTuple):
    """Reconstruction residuals of the coupled rank-one form at h = 2:
    W1 = A^T v x^T W2^T, W2 = W1^T A^T u x^T, and x in range(W2^T W1^T A^T).
    """

    v: np.ndarray
    u: np.ndarray
    residual_w1: float
    residual_w2: float
    residual_x: float


def _suffixes(s: LayerStack) -> list[np.ndarray]:
    """suffix[j] = W_{j+1} ... W_h x (0-based; suffix[h] = x)."""
    h = s.h
    suf = [None] * (h + 1)
    suf[h] = s.x
    for j in range(h - 1, -1, -1):
        suf[j] = s.weights[j] @ suf[j + 1]
    return suf


def deep_gradients(s: LayerStack, p: ProblemInstance
                   ) -> tuple[list[np.ndarray], np.ndarray, np.ndarray]:
    """All h + 1 gradients at (W_1..W_h, x), plus the residual.

    Each weight gradient is the outer product of a back-propagated left
    vector with a cached right suffix, so a step costs O(h) matrix-vector
    products and h rank-one d x d writes.
    """
    suf = _suffixes(s)
    r = p.A @ suf[0] - p.b
    g = p.A.T @ r
    grads = []
    for j in range(s.h):
        grads.append(np.outer(g, suf[j + 1]))
        g = s.weights[j].T @ g
    return grads, g, r


def gd_step_deep(s: LayerStack, p: ProblemInstance, alpha: float) -> LayerStack:
    """One simultaneous gradient step on all weights and x."""
    grads, gx, _ = deep_gradients(s, p)
    weights = tuple(W - alpha * G for W, G in zip(s.weights, grads))
    return LayerStack(weights=weights, x=s.x - alpha * gx)


def run_deep(s0: LayerStack, p: ProblemInstance,
             cfg: GdConfig = GdConfig()) -> tuple[LayerStack, IterateTrace]:
    """Gradient descent on a depth-h stack from any initializer.

    Same termination semantics as the shallower runners; the trace
    distance is ||W_1 ... W_h x - theta_star||.
    """
    s = LayerStack(weights=tuple(np.array(W, dtype=float) for W in s0.weights),
                   x=np.array(s0.x, dtype=float))
    alpha = cfg.resolve_alpha(p)
    theta_star = p.theta_star
    norm_b = np.linalg.norm(p.b)
    res_target = cfg.tol_residual * max(norm_b, 1.0)
    div_bound = DIVERGENCE_FACTOR * max(norm_b, 1.0)
    trace = IterateTrace(method="deep")
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
        s_next = gd_step_deep(s, p, alpha)
        step_norm = np.sqrt(
            sum(np.linalg.norm(Wn - Wo) ** 2
                for Wn, Wo in zip(s_next.weights, s.weights))
            + np.linalg.norm(s_next.x - s.x) ** 2
        )
        s = s_next
        if step_norm <= cfg.tol_step:
            trace.terminated_by = (
                Termination.STEP if res <= res_target else Termination.SADDLE_STOP
            )
            break
    return s, trace


def coupled_init(p: ProblemInstance, rng: Optional[RngSpec] = None,
                 v: Optional[np.ndarray] = None
                 ) -> tuple[LayerStack, np.ndarray, np.ndarray]:
    """Coupled rank-one initialization of a two-hidden-layer stack.

    From a nonzero v: x = A^T v / ||A^T v||^2, u = A A^T v / ||A A^T v||^2,
    W1 = [A^T v | 0 ... 0], W2 = W1^T A^T u x^T (equal to e1 x^T).  When v
    is drawn from ``rng`` it is rescaled so ||A^T v|| = 1, which makes x
    unit-norm; that is the convention under which the compact two-layer
    iteration reproduces this trajectory exactly. All three coupling
    identities are verified before returning.
    """
    if v is None:
        if rng is None:
            raise ValueError("rng is required when v is not given")
        v = draw_v(rng.generator(), p)
    else:
        v = np.asarray(v, dtype=float).reshape(-1)
        if not np.any(v):
            raise ValueError("v must be nonzero")
    Atv = p.A.T @ v
    x = Atv / float(Atv @ Atv)
    AAtv = p.A @ Atv
    u = AAtv / float(AAtv @ AAtv)
    W1 = np.zeros((p.d, p.d))
    W1[:, 0] = Atv
    W2 = np.outer(W1.T @ (p.A.T @ u), x)
    stack = LayerStack(weights=(W1, W2), x=x)
    scale = max(np.linalg.norm(W1), 1.0)
    # the first identity holds with the rescaled witness v / ||x||^2
    # (identical to v when ||A^T v|| = 1, the drawn-v convention)
    v1 = v / float(x @ x)
    checks = (
        np.linalg.norm(W1 - np.outer(p.A.T @ v1, W2 @ x)),
        np.linalg.norm(W2 - np.outer(W1.T @ (p.A.T @ u), x)),
        np.linalg.norm(W2.T @ (W1.T @ (p.A.T @ u)) - x),
        abs(float(Atv @ (p.A.T @ u)) - 1.0),
    )
    if max(checks) > 1e-10 * scale:
        raise ConstructionFailedError(
            f"coupling identities violated: residuals {checks}"
        )
    return stack, v, u


def check_coupled_outer(s: LayerStack, p: ProblemInstance) -> CoupledWitness:
    """Reconstruct (v, u) from an h=2 stack and measure how far it is from
    the coupled rank-one form preserved by gradient descent.

    v = (A^T)^+ W1 W2 x / ||x||^4 and u = A W1 W2 x / (||x||^2 ||A W1||_F^2);
    the third residual is the distance of x from range(W2^T W1^T A^T).
    """
    if s.h != 2:
        raise ValueError("coupled form is defined for exactly two hidden layers")
    xnorm2 = float(s.x @ s.x)
    if xnorm2 == 0.0:
        raise ZeroXError("x is zero; the coupled form collapses to a saddle")
    W1, W2 = s.weights
    W12x = W1 @ (W2 @ s.x)
    v = p.split.pinv_transpose_apply(W12x) / xnorm2**2
    AW1 = p.A @ W1
    u = (p.A @ W12x) / (xnorm2 * np.linalg.norm(AW1) ** 2)
    residual_w1 = np.linalg.norm(W1 - np.outer(p.A.T @ v, W2 @ s.x))
    residual_w2 = np.linalg.norm(W2 - np.outer(W1.T @ (p.A.T @ u), s.x))
    M = W2.T @ (W1.T @ p.A.T)
    coeff = np.linalg.lstsq(M, s.x, rcond=None)[0]
    residual_x = np.linalg.norm(M @ coeff - s.x)
    return CoupledWitness(v=v, u=u, residual_w1=float(residual_w1),
                          residual_w2=float(residual_w2),
                          residual_x=float(residual_x))


def run_compact2(p: ProblemInstance, cfg: GdConfig = GdConfig(),
                 rng: Optional[RngSpec] = None,
                 v: Optional[np.ndarray] = None
                 ) -> tuple[np.ndarray, IterateTrace]:
    """Compact n + 2 iteration for the two-hidden-layer network.

    Loop per iteration:
        y = A z;  e = alpha (rho^4 y - b);  gamma = rho^2 (y . e);
        v <- (v - e) / (1 - gamma)^2;  rho <- rho (1 - gamma);  z = A^T v.
    Returns rho^4 z, which tracks W_1 W_2 x of the full h=2 trajectory
    from the matched coupled initialization.
    """
    if v is None and rng is None:
        raise ValueError("rng is required when v is not given")
    v = draw_v(rng.generator(), p) if v is None else np.array(v, dtype=float).reshape(-1)
    state = CompactState(v=v, rho=1.0, gamma=0.0, z=p.A.T @ v)
    theta_star = p.theta_star
    norm_b = np.linalg.norm(p.b)
    res_target = cfg.tol_residual * max(norm_b, 1.0)
    div_bound = DIVERGENCE_FACTOR * max(norm_b, 1.0)
    alpha = cfg.resolve_alpha(p)
    trace = IterateTrace(method="compact2")
    for k in range(cfg.max_iters + 1):
        y = p.A @ state.z
        rho2 = state.rho**2
        rho4 = rho2 * rho2
        e = alpha * (rho4 * y - p.b)
        res = float(np.linalg.norm(rho4 * y - p.b))
        gamma = rho2 * float(y @ e)
        if not (np.isfinite(res) and np.isfinite(gamma)):
            trace.terminated_by = Termination.DIVERGED
            break
        trace.append(k, res, np.linalg.norm(rho4 * state.z - theta_star),
                     gamma=gamma, rho=state.rho)
        if cfg.snapshot_every and k % cfg.snapshot_every == 0:
            trace.snapshot(k, rho4 * state.z)
        if res > div_bound:
            trace.terminated_by = Termination.DIVERGED
            break
        if res <= res_target:
            trace.terminated_by = Termination.RESIDUAL
            break
        if k == cfg.max_iters:
            trace.terminated_by = Termination.MAX_ITERS
            break
        if abs(1.0 - gamma) < GAMMA_GUARD:
            raise GammaSingularError(f"|1 - gamma| < {GAMMA_GUARD:g} at iteration {k}")
        state.v = (state.v - e) / (1.0 - gamma) ** 2
        state.rho = state.rho * (1.0 - gamma)
        state.gamma = gamma
        state.z = p.A.T @ state.v
    return state.rho**4 * state.z, trace


def check_bioptimality2(s: LayerStack, p: ProblemInstance, tol: float) -> BioptReport:
    """Four minimality residuals of an interpolating h=2 stack:

    1. ||W1 W2 x - theta_star||
    2. ||x - minnorm(A W1 W2, b)||
    3. ||W1 - theta_star (W2 x)^T / ||W2 x||^2||_F   (min Frobenius norm
       solution of A Z (W2 x) = b)
    4. ||W2 - pinv(A W1) b x^T / ||x||^2||_F          (min Frobenius norm
       solution of (A W1) Z x = b)
    The Kronecker systems behind 3 and 4 are evaluated through these
    closed forms; no d^2-column matrix is built.
    """
    if s.h != 2:
        raise ValueError("expected exactly two hidden layers")
    xnorm2 = float(s.x @ s.x)
    if xnorm2 == 0.0:
        raise ZeroXError("x is zero")
    W1, W2 = s.weights
    y_eff = s.effective()
    norm_b = np.linalg.norm(p.b)
    if np.linalg.norm(p.A @ y_eff - p.b) > tol * max(norm_b, 1.0):
        raise NotInterpolantError("A W1 W2 x != b within tol")
    r1 = np.linalg.norm(y_eff - p.theta_star)
    AW12 = p.A @ (W1 @ W2)
    r2 = np.linalg.norm(s.x - np.linalg.lstsq(AW12, p.b, rcond=None)[0])
    w2x = W2 @ s.x
    r3 = np.linalg.norm(W1 - np.outer(p.theta_star, w2x) / float(w2x @ w2x))
    AW1 = p.A @ W1
    r4 = np.linalg.norm(W2 - np.outer(np.linalg.pinv(AW1) @ p.b, s.x) / xnorm2)
    return BioptReport(residuals=(float(r1), float(r2), float(r3), float(r4)), tol=tol)


def stability_decompose(W1, p: ProblemInstance) -> StabilityDecomposition:
    """Split a first-layer matrix into its row-space and kernel parts:
    P = (A^T)^+ W1 and C = W1 - A^T P, so that A C = 0 exactly.
    """
    W1 = np.asarray(W1, dtype=float)
    if W1.shape[0] != p.d:
        raise ValueError(f"W1 has {W1.shape[0]} rows, expected {p.d}")
    P = p.split.pinv_transpose_apply(W1)
    C = W1 - p.A.T @ P
    return StabilityDecomposition(P=P, C=C)


def stability_bound(s: LayerStack, C) -> float:
    """Product-of-norms bound prod_{i>=2} ||W_i|| * ||x|| * ||C|| on the
    distance of the converged product from the minimum-norm solution.

    Valid whenever the row-space part of the limit lands on theta_star
    (which holds at interpolating limits); for h = 1 the product is empty.
    """
    C = np.asarray(C, dtype=float)
    bound = float(np.linalg.norm(C, 2)) * float(np.linalg.norm(s.x))
    for W in s.weights[1:]:
        bound *= float(np.linalg.norm(W, 2))
    return bound


def baseline_init(d: int, h: int, kind: str, rng: RngSpec) -> LayerStack:
    """Standard entrywise initializers for comparison runs.

    'xavier': entries Uniform(-1/sqrt(d), 1/sqrt(d)) for weights and x;
    'he': entries Normal(0, sqrt(2/d)); 'identity': every W_i = I_d and x
    uniform on the unit sphere.
    """
    if h < 1 or d < 1:
        raise ValueError("need h >= 1 and d >= 1")
    gen = rng.generator()
    kind = kind.lower()
    if kind == "xavier":
        lim = 1.0 / np.sqrt(d)
        weights = tuple(gen.uniform(-lim, lim, size=(d, d)) for _ in range(h))
        x = gen.uniform(-lim, lim, size=d)
    elif kind == "he":
        std = np.sqrt(2.0 / d)
        weights = tuple(std * gen.standard_normal((d, d)) for _ in range(h))
        x = std * gen.standard_normal(d)
    elif kind == "identity":
        weights = tuple(np.eye(d) for _ in range(h))
        x = draw_unit(gen, d)
    else:
        raise ValueError(f"unknown initializer kind: {kind!r}")
    return LayerStack(weights=weights, x=x)
