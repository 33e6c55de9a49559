"""One-hidden-layer linear network on 1/2 ||A W x - b||^2.

A rank-one row-space initialization W0 = A^T v0 x0^T is preserved by every
gradient step (W_k stays of the form A^T v_k x_k^T), which lets the full
(d^2 + d)-parameter iteration be collapsed first to the (x, v) pair
(d + n numbers) and then, with unit x0, to n + 2 numbers.  At convergence
the factored solution is bi-optimal: the product and each factor given the
other are all minimum-norm solutions of their respective systems.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .exceptions import GammaSingularError, NotInterpolantError, ZeroXError
from .iterate import DIVERGENCE_FACTOR, GdConfig, IterateTrace, Termination
from .linalg import ProblemInstance
from .rng import RngSpec

#: Guard for the compact iterations: |1 - gamma| below this aborts the run
#: rather than amplifying roundoff through the 1/(1 - gamma) rescaling.
GAMMA_GUARD = 1e-14


@dataclass(frozen=True)
class HiddenPair:
    """Hidden-layer weight matrix W (d x d) and outer vector x (length d)."""

    W: np.ndarray
    x: np.ndarray

    def effective(self) -> np.ndarray:
        """Effective predictor W x."""
        return self.W @ self.x


@dataclass(frozen=True)
class PairState:
    """Collapsed (x, v) state of the reduced bi-optimal iteration.

    Exactly d + n scalars: the hidden matrix is implicit as A^T v x^T.
    """

    x: np.ndarray
    v: np.ndarray

    @property
    def parameter_count(self) -> int:
        return self.x.shape[0] + self.v.shape[0]


@dataclass
class CompactState:
    """State of the compact O(n) iteration: v, rho, gamma plus the cache
    z = A^T v.

    Exactly n + 2 scalars of true state; z is a derived cache kept in sync
    so each step costs O(max(n, T_A)).
    """

    v: np.ndarray
    rho: float
    gamma: float
    z: np.ndarray

    @property
    def parameter_count(self) -> int:
        return self.v.shape[0] + 2


class OuterFormWitness(NamedTuple):
    """Best rank-one row-space reconstruction of W against a given x."""

    v_hat: np.ndarray
    residual: float


@dataclass(frozen=True)
class BioptReport:
    """Minimality residuals of a factored interpolant, with pass flags."""

    residuals: tuple[float, ...]
    tol: float

    @property
    def passed(self) -> tuple[bool, ...]:
        return tuple(r <= self.tol for r in self.residuals)

    @property
    def all_passed(self) -> bool:
        return all(self.passed)


def gd_step_hidden(s: HiddenPair, p: ProblemInstance, alpha: float) -> HiddenPair:
    """One simultaneous gradient step on (W, x).

    Both gradients are evaluated at the incoming pair:
    W' = W - alpha A^T r x^T and x' = x - alpha W^T A^T r, r = A W x - b.
    """
    r = p.A @ (s.W @ s.x) - p.b
    g = p.A.T @ r
    return HiddenPair(W=s.W - alpha * np.outer(g, s.x), x=s.x - alpha * (s.W.T @ g))


def draw_v(gen: np.random.Generator, p: ProblemInstance) -> np.ndarray:
    """Random nonzero v, rescaled so ||A^T v|| = 1.

    The scale of v is free in the rank-one initialization; fixing the
    effective predictor's initial norm keeps the safe-step heuristics
    meaningful across problems and matches the unit-x0 convention of the
    compact iterations.
    """
    v = gen.standard_normal(p.n)
    return v / np.linalg.norm(p.A.T @ v)


def draw_unit(gen: np.random.Generator, d: int) -> np.ndarray:
    """Uniform draw from the unit sphere in R^d."""
    x = gen.standard_normal(d)
    return x / np.linalg.norm(x)


def biopt_init(p: ProblemInstance, rng: Optional[RngSpec] = None,
               v: Optional[np.ndarray] = None,
               x: Optional[np.ndarray] = None) -> HiddenPair:
    """Rank-one row-space initialization W0 = A^T v0 x0^T.

    v0 and x0 are drawn from ``rng`` unless given explicitly (explicit
    values are used as-is; drawn v is rescaled per :func:`draw_v`, drawn x
    is uniform on the unit sphere).
    """
    if (v is None or x is None) and rng is None:
        raise ValueError("rng is required when v or x is not given")
    gen = rng.generator() if rng is not None else None
    v = draw_v(gen, p) if v is None else np.asarray(v, dtype=float).reshape(-1)
    x = draw_unit(gen, p.d) if x is None else np.asarray(x, dtype=float).reshape(-1)
    if not np.any(v):
        raise ValueError("v must be nonzero")
    return HiddenPair(W=np.outer(p.A.T @ v, x), x=x)


def _saddle_or_step(trace, res, res_target):
    trace.terminated_by = (
        Termination.STEP if res <= res_target else Termination.SADDLE_STOP
    )


def run_hidden(s0: HiddenPair, p: ProblemInstance,
               cfg: GdConfig = GdConfig()) -> tuple[HiddenPair, IterateTrace]:
    """Full-matrix gradient descent on (W, x).

    Trace distance is ||W_k x_k - theta_star||. A step whose parameter
    change is within tol_step while the residual is still large terminates
    as SADDLE_STOP (stationary but not interpolating).
    """
    s = HiddenPair(W=np.array(s0.W, dtype=float), x=np.array(s0.x, dtype=float))
    alpha = cfg.resolve_alpha(p)
    theta_star = p.theta_star
    norm_b = np.linalg.norm(p.b)
    res_target = cfg.tol_residual * max(norm_b, 1.0)
    div_bound = DIVERGENCE_FACTOR * max(norm_b, 1.0)
    trace = IterateTrace(method="hidden")
    for k in range(cfg.max_iters + 1):
        y_eff = s.W @ s.x
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
        s_next = gd_step_hidden(s, p, alpha)
        step_norm = np.sqrt(
            np.linalg.norm(s_next.W - s.W) ** 2 + np.linalg.norm(s_next.x - s.x) ** 2
        )
        s = s_next
        if step_norm <= cfg.tol_step:
            _saddle_or_step(trace, res, res_target)
            break
    return s, trace


def check_rowspace_outer(s: HiddenPair, p: ProblemInstance) -> OuterFormWitness:
    """Reconstruct v from (W, x) and measure how far W is from the
    preserved rank-one row-space form A^T v x^T.

    v_hat = (A^T)^+ W x / ||x||^2; the residual is ||W - A^T v_hat x^T||_F.
    """
    xnorm2 = float(s.x @ s.x)
    if xnorm2 == 0.0:
        raise ZeroXError("x is zero; the rank-one form is undefined at this iterate")
    v_hat = p.split.pinv_transpose_apply(s.W @ s.x) / xnorm2
    residual = np.linalg.norm(s.W - np.outer(p.A.T @ v_hat, s.x))
    return OuterFormWitness(v_hat=v_hat, residual=float(residual))


def check_bioptimality(s: HiddenPair, p: ProblemInstance, tol: float) -> BioptReport:
    """Three minimality residuals of an interpolating pair (W, x):

    1. ||W x - theta_star||
    2. ||x - minnorm(A W, b)||
    3. ||W - Z*||_F where Z* = theta_star x^T / ||x||^2 is the minimum
       Frobenius norm solution of A Z x = b (closed form; the d^2-column
       Kronecker system is never materialized).
    """
    xnorm2 = float(s.x @ s.x)
    if xnorm2 == 0.0:
        raise ZeroXError("x is zero")
    y_eff = s.W @ s.x
    norm_b = np.linalg.norm(p.b)
    if np.linalg.norm(p.A @ y_eff - p.b) > tol * max(norm_b, 1.0):
        raise NotInterpolantError("A W x != b within tol")
    r1 = np.linalg.norm(y_eff - p.theta_star)
    AW = p.A @ s.W
    x_min = np.linalg.lstsq(AW, p.b, rcond=None)[0]
    r2 = np.linalg.norm(s.x - x_min)
    r3 = np.linalg.norm(s.W - np.outer(p.theta_star, s.x) / xnorm2)
    return BioptReport(residuals=(float(r1), float(r2), float(r3)), tol=tol)


def run_biopt_reduced(p: ProblemInstance, cfg: GdConfig = GdConfig(),
                      rng: Optional[RngSpec] = None,
                      v: Optional[np.ndarray] = None,
                      x: Optional[np.ndarray] = None
                      ) -> tuple[HiddenPair, IterateTrace]:
    """Reduced d + n iteration on the (x, v) pair.

    Exactly reproduces the full-matrix trajectory started from
    biopt_init with the same (v0, x0, alpha): the hidden matrix is carried
    implicitly as A^T v x^T. Output is the reconstructed pair.
    """
    if (v is None or x is None) and rng is None:
        raise ValueError("rng is required when v or x is not given")
    gen = rng.generator() if rng is not None else None
    v = draw_v(gen, p) if v is None else np.array(v, dtype=float).reshape(-1)
    x = draw_unit(gen, p.d) if x is None else np.array(x, dtype=float).reshape(-1)
    alpha = cfg.resolve_alpha(p)
    AAT = p.A @ p.A.T
    theta_star = p.theta_star
    norm_b = np.linalg.norm(p.b)
    res_target = cfg.tol_residual * max(norm_b, 1.0)
    div_bound = DIVERGENCE_FACTOR * max(norm_b, 1.0)
    trace = IterateTrace(method="biopt_reduced")
    for k in range(cfg.max_iters + 1):
        xnorm2 = float(x @ x)
        rbar = xnorm2 * (AAT @ v) - p.b
        res = float(np.linalg.norm(rbar))
        if not np.isfinite(res):
            trace.terminated_by = Termination.DIVERGED
            break
        y_eff = xnorm2 * (p.A.T @ v)
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
        scale = float(v @ (AAT @ rbar))
        x_next = x - alpha * scale * x
        xx_next = float(x_next @ x_next)
        if xx_next == 0.0:
            raise ZeroXError(f"x vanished at iteration {k + 1}")
        v_next = (float(x @ x_next) / xx_next) * (v - alpha * rbar)
        step_norm = np.sqrt(np.linalg.norm(x_next - x) ** 2
                            + np.linalg.norm(v_next - v) ** 2)
        x, v = x_next, v_next
        if step_norm <= cfg.tol_step:
            _saddle_or_step(trace, res, res_target)
            break
    state = PairState(x=x, v=v)
    return HiddenPair(W=np.outer(p.A.T @ state.v, state.x), x=state.x), trace


def run_compact1(p: ProblemInstance, cfg: GdConfig = GdConfig(),
                 rng: Optional[RngSpec] = None,
                 v: Optional[np.ndarray] = None
                 ) -> tuple[np.ndarray, IterateTrace]:
    """Compact n + 2 iteration for the one-hidden-layer network.

    Loop per iteration (unit x0 assumed, so ||x_k||^2 = rho_k^2):
        y = A z;  r = alpha (rho^2 y - b);  gamma = y . r;
        v <- (v - r) / (1 - gamma);  rho <- rho (1 - gamma);  z = A^T v.
    Returns rho^2 z, which tracks the full trajectory's W_k x_k exactly.
    Per-iteration cost is O(max(n, T_A)); the trace stores gamma and rho.
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
    trace = IterateTrace(method="compact1")
    for k in range(cfg.max_iters + 1):
        y = p.A @ state.z
        rho2 = state.rho**2
        r = alpha * (rho2 * y - p.b)
        res = float(np.linalg.norm(rho2 * y - p.b))
        gamma = float(y @ r)
        if not (np.isfinite(res) and np.isfinite(gamma)):
            trace.terminated_by = Termination.DIVERGED
            break
        trace.append(k, res, np.linalg.norm(rho2 * state.z - theta_star),
                     gamma=gamma, rho=state.rho)
        if cfg.snapshot_every and k % cfg.snapshot_every == 0:
            trace.snapshot(k, rho2 * state.z)
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
        state.v = (state.v - r) / (1.0 - gamma)
        state.rho = state.rho * (1.0 - gamma)
        state.gamma = gamma
        state.z = p.A.T @ state.v
    return state.rho**2 * state.z, trace
