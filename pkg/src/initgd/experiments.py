"""Experiment building blocks shared by the CLI and the acceptance suite:
zigzag detection for the compact iterations, 2-d path projection,
power-of-ten step-size search, and the synthetic problem families used in
the benchmark comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .deep import LayerStack, gd_step_deep, stability_bound, stability_decompose
from .exceptions import DimensionMismatchError, NoGammaDataError
from .hidden import draw_unit
from .iterate import DIVERGENCE_FACTOR, GdConfig, IterateTrace, Termination
from .linalg import ProblemInstance, haar_orthogonal
from .rng import RngSpec

#: Power-of-ten step-size grid bracketing every rate used in the
#: benchmark comparisons.
LR_GRID = tuple(10.0**e for e in range(-6, 2))

#: Amplification-factor exponent per compact method: the one-hidden-layer
#: iteration rescales v by 1/(1-gamma), the two-layer one by its square.
AMPLIFICATION_EXPONENT = {"compact1": 1, "compact2": 2}


@dataclass(frozen=True)
class ZigzagReport:
    onset: Optional[int]
    oscillating: bool


def detect_zigzag(trace: IterateTrace, exponent: Optional[int] = None) -> ZigzagReport:
    """Locate the onset of rescaling-factor oscillation in a compact trace.

    The onset is the first iteration whose amplification factor
    (1/(1-gamma), raised to the method's exponent) exceeds one and is
    followed by at least three iterations strictly alternating around one.
    """
    if exponent is None:
        exponent = AMPLIFICATION_EXPONENT.get(trace.method)
        if exponent is None:
            raise ValueError(
                f"cannot infer amplification exponent for method {trace.method!r}")
    if not trace.has_gamma:
        raise NoGammaDataError("trace has no gamma values")
    gammas = trace.gammas
    iters = trace.iterations
    with np.errstate(divide="ignore"):
        amp = (1.0 / (1.0 - gammas)) ** exponent
    above = amp > 1.0
    for i in range(len(amp) - 3):
        if above[i] and not above[i + 1] and above[i + 2] and not above[i + 3]:
            return ZigzagReport(onset=int(iters[i]), oscillating=True)
    return ZigzagReport(onset=None, oscillating=False)


@dataclass(frozen=True)
class PathProjection:
    """Shared random 2-d projection of one or more iteration paths."""

    basis: np.ndarray
    points: dict[str, np.ndarray]
    iterations: dict[str, np.ndarray]


def projection_basis(d: int, rng: RngSpec) -> np.ndarray:
    """Seeded 2 x d matrix with orthonormal rows."""
    gen = rng.generator()
    Q = np.linalg.qr(gen.standard_normal((d, 2)))[0]
    return Q.T


def project_paths(traces: Mapping[str, IterateTrace], d: int,
                  rng: RngSpec) -> PathProjection:
    """Project every trace's snapshots through one shared random basis.

    All traces must carry snapshots of dimension d; the same basis is used
    for every method so common points (e.g. a shared limit) coincide.
    """
    basis = projection_basis(d, rng)
    points, its = {}, {}
    for name, trace in traces.items():
        if not trace.snapshots:
            raise ValueError(f"trace {name!r} has no snapshots to project")
        snaps = []
        for k, vec in trace.snapshots:
            if vec.shape[0] != d:
                raise DimensionMismatchError(
                    f"snapshot of {name!r} has dimension {vec.shape[0]}, expected {d}")
            snaps.append(basis @ vec)
        points[name] = np.array(snaps)
        its[name] = np.array([k for k, _ in trace.snapshots], dtype=int)
    return PathProjection(basis=basis, points=points, iterations=its)


@dataclass(frozen=True)
class LrGridEntry:
    alpha: float
    diverged: bool
    iters_to_target: Optional[int]
    final_residual: float


@dataclass(frozen=True)
class LrGridResult:
    entries: tuple[LrGridEntry, ...]
    chosen_alpha: Optional[float]

    @property
    def chosen(self) -> Optional[LrGridEntry]:
        for e in self.entries:
            if e.alpha == self.chosen_alpha:
                return e
        return None


def lr_grid_search(make_trace: Callable[[float], IterateTrace],
                   target_residual: float,
                   grid: Sequence[float] = LR_GRID) -> LrGridResult:
    """Probe a power-of-ten step-size grid and pick the largest usable rate.

    Preference order: the largest non-diverging rate whose run reaches the
    target residual; if no rate reaches it, the largest non-diverging
    rate. Runs that blow past the divergence bound are excluded entirely.
    """
    entries = []
    for alpha in sorted(grid, reverse=True):
        trace = make_trace(alpha)
        diverged = trace.terminated_by is Termination.DIVERGED
        reached = None if diverged else trace.first_below(target_residual)
        final = trace.residuals[-1] if len(trace) else np.inf
        entries.append(LrGridEntry(alpha=alpha, diverged=diverged,
                                   iters_to_target=reached,
                                   final_residual=float(final)))
    reaching = [e for e in entries if e.iters_to_target is not None]
    if reaching:
        chosen = max(reaching, key=lambda e: e.alpha).alpha
    else:
        stable = [e for e in entries if not e.diverged]
        chosen = max(stable, key=lambda e: e.alpha).alpha if stable else None
    return LrGridResult(entries=tuple(entries), chosen_alpha=chosen)


def scaled_spectrum_problem(n: int, d: int, cond: float, rng: RngSpec,
                            top_sigma: float = 0.447) -> ProblemInstance:
    """Benchmark instance for the step-size-grid comparison.

    The spectrum is log-spaced with the requested condition number but
    scaled so the top singular value is ``top_sigma`` (the regime data
    lands in after count-matrix normalization, where the largest stable
    power-of-ten rate for plain descent sits just inside its stability
    boundary). Targets are Gram-weighted, b = A A^T u with Gaussian u,
    i.e. realizable labels whose energy follows the data spectrum, then
    normalized.
    """
    if not (1 <= n <= d):
        raise ValueError(f"need 1 <= n <= d, got n={n}, d={d}")
    if cond < 1:
        raise ValueError("cond must be >= 1")
    gen = rng.generator()
    U = haar_orthogonal(gen, n)
    V1 = np.linalg.qr(gen.standard_normal((d, n)))[0]
    sigma = np.logspace(np.log10(top_sigma / cond), np.log10(top_sigma), n)[::-1]
    A = U @ (sigma[:, None] * V1.T)
    u = gen.standard_normal(n)
    b = A @ (A.T @ u)
    b = b / np.linalg.norm(b)
    return ProblemInstance(A, b)


@dataclass(frozen=True)
class StabilityRun:
    """Outcome of one kernel-perturbed training run."""

    stack: LayerStack
    trace: IterateTrace
    C0: np.ndarray
    kernel_drift_max: float
    bound: float
    dist_theta_star: float


def kernel_perturbed_init(p: ProblemInstance, h: int, rng: RngSpec,
                          c_norm: float = 1.0) -> tuple[LayerStack, np.ndarray]:
    """First layer A^T P0 + C with a kernel-space C of spectral norm
    ``c_norm``; all remaining hidden weights are the identity and x is a
    random unit vector.
    """
    gen = rng.generator()
    split = p.split
    P0 = gen.standard_normal((p.n, p.d)) / np.sqrt(p.n)
    if split.V2.shape[1] == 0:
        raise ValueError("square systems have no kernel space to perturb")
    C = split.V2 @ gen.standard_normal((p.d - p.n, p.d))
    C = c_norm * C / np.linalg.norm(C, 2)
    W1 = p.A.T @ P0 + C
    weights = (W1,) + tuple(np.eye(p.d) for _ in range(h - 1))
    return LayerStack(weights=weights, x=draw_unit(gen, p.d)), C


def run_stability_experiment(p: ProblemInstance, h: int, cfg: GdConfig,
                             rng: RngSpec, c_norm: float = 1.0,
                             check_every: int = 1) -> StabilityRun:
    """Train a kernel-perturbed stack and measure how far the kernel part
    of the first layer drifts, plus the product-of-norms bound against the
    actual final distance to the minimum-norm solution.
    """
    s0, C0 = kernel_perturbed_init(p, h, rng, c_norm=c_norm)
    alpha = cfg.resolve_alpha(p)
    s = s0
    drift_max = 0.0
    trace = IterateTrace(method="stability")
    theta_star = p.theta_star
    norm_b = np.linalg.norm(p.b)
    res_target = cfg.tol_residual * max(norm_b, 1.0)
    div_bound = DIVERGENCE_FACTOR * max(norm_b, 1.0)
    for k in range(cfg.max_iters + 1):
        y_eff = s.effective()
        res = float(np.linalg.norm(p.A @ y_eff - p.b))
        if not np.isfinite(res):
            trace.terminated_by = Termination.DIVERGED
            break
        trace.append(k, res, np.linalg.norm(y_eff - theta_star))
        if k % check_every == 0:
            C_k = stability_decompose(s.weights[0], p).C
            drift_max = max(drift_max, float(np.linalg.norm(C_k - C0)))
        if res > div_bound:
            trace.terminated_by = Termination.DIVERGED
            break
        if res <= res_target:
            trace.terminated_by = Termination.RESIDUAL
            break
        if k == cfg.max_iters:
            trace.terminated_by = Termination.MAX_ITERS
            break
        s = gd_step_deep(s, p, alpha)
    bound = stability_bound(s, C0)
    dist = float(np.linalg.norm(s.effective() - theta_star))
    return StabilityRun(stack=s, trace=trace, C0=C0, kernel_drift_max=drift_max,
                        bound=bound, dist_theta_star=dist)
