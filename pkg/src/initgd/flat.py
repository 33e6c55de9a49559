"""Plain gradient descent on 1/2 ||A y - b||^2, its closed-form limit, and
initialization control.

The limit of the iteration from any starting point y0 (with a safe step)
is the kernel component of y0 plus the minimum-norm solution; the kernel
component never moves. ``controlled_init`` inverts that map: it finds a
starting point whose limit is any requested interpolant.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConvergenceError, NotASolutionError, StepTooLargeError
from .iterate import DIVERGENCE_FACTOR, GdConfig, IterateTrace, Termination
from .linalg import ProblemInstance


def gd_step(y: np.ndarray, p: ProblemInstance, alpha: float) -> np.ndarray:
    """One fixed-step update: y - alpha * A^T (A y - b)."""
    return y - alpha * (p.A.T @ (p.A @ y - p.b))


def run_gd(y0, p: ProblemInstance, cfg: GdConfig = GdConfig()) -> tuple[np.ndarray, IterateTrace]:
    """Run fixed-step gradient descent from ``y0``.

    The trace records residual and distance to the minimum-norm solution
    every iteration. Termination: residual tolerance, step tolerance,
    iteration budget, or divergence (see GdConfig).
    """
    y = np.array(y0, dtype=float).reshape(-1)
    if y.shape[0] != p.d:
        raise ValueError(f"y0 has length {y.shape[0]}, expected {p.d}")
    alpha = cfg.resolve_alpha(p)
    theta_star = p.theta_star
    norm_b = np.linalg.norm(p.b)
    res_target = cfg.tol_residual * max(norm_b, 1.0)
    div_bound = DIVERGENCE_FACTOR * max(norm_b, 1.0)
    trace = IterateTrace(method="gd")
    for k in range(cfg.max_iters + 1):
        r = p.A @ y - p.b
        res = float(np.linalg.norm(r))
        if not np.isfinite(res):
            trace.terminated_by = Termination.DIVERGED
            break
        trace.append(k, res, np.linalg.norm(y - theta_star))
        if cfg.snapshot_every and k % cfg.snapshot_every == 0:
            trace.snapshot(k, y)
        if res > div_bound:
            trace.terminated_by = Termination.DIVERGED
            break
        if res <= res_target:
            trace.terminated_by = Termination.RESIDUAL
            break
        if k == cfg.max_iters:
            trace.terminated_by = Termination.MAX_ITERS
            break
        y_next = y - alpha * (p.A.T @ r)
        if np.linalg.norm(y_next - y) <= cfg.tol_step:
            y = y_next
            trace.terminated_by = Termination.STEP
            break
        y = y_next
    return y, trace


def predict_limit(y0, p: ProblemInstance, alpha: float) -> np.ndarray:
    """Closed-form limit of the iteration from ``y0``: kernel part of y0
    plus the minimum-norm solution.

    Requires ||A||^2 < 2/alpha, the condition under which the iteration
    provably converges for every starting point.
    """
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    if p.spectral_norm**2 >= 2.0 / alpha:
        raise StepTooLargeError(
            f"||A||^2 = {p.spectral_norm**2:.6g} >= 2/alpha = {2.0 / alpha:.6g}"
        )
    return p.split.kernel_project(y0) + p.theta_star


def controlled_init(p: ProblemInstance, target, cfg: GdConfig = GdConfig()) -> np.ndarray:
    """Starting point from which gradient descent converges to ``target``.

    ``target`` must itself solve A y = b (verified to 1e-8 * ||b||): only
    then does the kernel equation P y0 = target - theta_star, P the
    orthogonal projector onto ker(A), admit a solution. The projector
    system is solved by an inner fixed-step descent with the same
    configuration as the outer run; the returned y0 is its final iterate.
    """
    target = np.asarray(target, dtype=float).reshape(-1)
    if target.shape[0] != p.d:
        raise ValueError(f"target has length {target.shape[0]}, expected {p.d}")
    norm_b = np.linalg.norm(p.b)
    defect = p.residual_norm(target)
    if defect > 1e-8 * max(norm_b, 1.0):
        raise NotASolutionError(
            f"||A target - b|| = {defect:.3e} exceeds 1e-8 * max(||b||, 1)"
        )
    rhs = target - p.theta_star
    alpha = cfg.resolve_alpha(p)
    kernel = p.split.kernel_project
    z = np.zeros(p.d)
    tol = cfg.tol_residual * max(np.linalg.norm(rhs), 1.0)
    for _ in range(cfg.max_iters + 1):
        inner_residual = kernel(z) - rhs
        if np.linalg.norm(inner_residual) <= tol:
            return z
        z = z - alpha * kernel(inner_residual)
    raise ConvergenceError(
        f"projector solve did not reach {tol:.3e} within {cfg.max_iters} iterations"
    )
