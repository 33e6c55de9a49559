"""Iteration configuration and per-iteration trace records."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linalg import ProblemInstance

#: A run is flagged diverged once the residual exceeds this multiple of
#: max(||b||, 1) or turns non-finite.
DIVERGENCE_FACTOR = 1e12


class Termination(enum.Enum):
    RESIDUAL = "residual"
    STEP = "step"
    MAX_ITERS = "max_iters"
    DIVERGED = "diverged"
    SADDLE_STOP = "saddle_stop"


@dataclass(frozen=True)
class GdConfig:
    """Fixed-step gradient descent configuration.

    ``alpha=None`` selects the safe default 1/||A||^2 at run time (runners
    for deep stacks scale it down further; see their docstrings).
    Stopping: residual <= tol_residual * max(||b||, 1), or step norm
    <= tol_step, whichever fires first. ``snapshot_every=0`` disables
    parameter snapshots.
    """

    alpha: Optional[float] = None
    max_iters: int = 10_000
    tol_residual: float = 1e-10
    tol_step: float = 0.0
    snapshot_every: int = 0

    def __post_init__(self):
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol_residual < 0 or self.tol_step < 0:
            raise ValueError("tolerances must be >= 0")
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be >= 0")

    def resolve_alpha(self, p: ProblemInstance) -> float:
        return self.alpha if self.alpha is not None else 1.0 / p.spectral_norm**2


@dataclass(frozen=True)
class TraceRecord:
    k: int
    residual: float
    dist_theta_star: float
    gamma: Optional[float] = None
    rho: Optional[float] = None


@dataclass
class IterateTrace:
    """Per-iteration monitor of a gradient-descent run.

    Records are appended in strictly increasing iteration order and only
    with finite values; divergence is flagged via ``terminated_by`` the
    first time a non-finite or runaway residual appears. ``snapshots``
    holds (k, effective-predictor copy) pairs when snapshotting is on.
    """

    method: str = ""
    records: list[TraceRecord] = field(default_factory=list)
    snapshots: list[tuple[int, np.ndarray]] = field(default_factory=list)
    terminated_by: Optional[Termination] = None

    def append(self, k, residual, dist_theta_star, gamma=None, rho=None):
        if self.records and k <= self.records[-1].k:
            raise ValueError("iteration indices must be strictly increasing")
        values = (residual, dist_theta_star) + tuple(
            v for v in (gamma, rho) if v is not None
        )
        if not all(np.isfinite(values)):
            raise ValueError("trace records must be finite")
        self.records.append(
            TraceRecord(int(k), float(residual), float(dist_theta_star),
                        None if gamma is None else float(gamma),
                        None if rho is None else float(rho))
        )

    def snapshot(self, k: int, vector: np.ndarray):
        self.snapshots.append((int(k), np.array(vector, dtype=float)))

    @property
    def iterations(self) -> np.ndarray:
        return np.array([r.k for r in self.records], dtype=int)

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.records])

    @property
    def distances(self) -> np.ndarray:
        return np.array([r.dist_theta_star for r in self.records])

    @property
    def has_gamma(self) -> bool:
        return any(r.gamma is not None for r in self.records)

    @property
    def gammas(self) -> np.ndarray:
        return np.array([np.nan if r.gamma is None else r.gamma for r in self.records])

    def first_below(self, residual_threshold: float) -> Optional[int]:
        """First iteration index whose residual is <= the threshold."""
        for r in self.records:
            if r.residual <= residual_threshold:
                return r.k
        return None

    def __len__(self):
        return len(self.records)
