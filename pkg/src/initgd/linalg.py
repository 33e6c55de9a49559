"""Dense linear-algebra kernel: SVD factorizations, minimum-norm solves,
norms, and seeded random problem generation.

All values are immutable after construction and safe to share across
threads; every function here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import RankDeficientError
from .rng import RngSpec

#: Relative threshold below which the smallest singular value is treated
#: as zero. All solvers assume full row rank and reject anything below it.
RANK_TOL = 1e-10


class MatrixNorms(NamedTuple):
    spectral: float
    frobenius: float


@dataclass(frozen=True)
class SvdSplit:
    """Factor bundle A = U diag(sigma) V1^T with V2 spanning ker(A).

    ``U`` is n x n orthogonal, ``sigma`` the n positive singular values in
    descending order, ``V1`` the first n right singular vectors (d x n) and
    ``V2`` the remaining d-n columns, an orthonormal basis of the null
    space (A V2 = 0).
    """

    U: np.ndarray
    sigma: np.ndarray
    V1: np.ndarray
    V2: np.ndarray

    def kernel_project(self, y: np.ndarray) -> np.ndarray:
        """Orthogonal projection of y onto ker(A), i.e. V2 V2^T y."""
        return self.V2 @ (self.V2.T @ y)

    def rowspace_project(self, y: np.ndarray) -> np.ndarray:
        """Orthogonal projection of y onto range(A^T), i.e. V1 V1^T y."""
        return self.V1 @ (self.V1.T @ y)

    def pinv_transpose_apply(self, w: np.ndarray) -> np.ndarray:
        """Apply (A^T)^+ = U diag(sigma)^-1 V1^T to a vector or matrix."""
        return self.U @ ((self.V1.T @ w).T / self.sigma).T


def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def svd_split(A) -> SvdSplit:
    """Full SVD of a wide full-row-rank matrix, split into range/kernel factors.

    Signs are fixed deterministically: the largest-magnitude entry of every
    right singular vector is made positive (U columns flipped to match), so
    repeated factorizations of the same matrix are identical.

    Raises
    ------
    RankDeficientError
        If the smallest singular value is at or below RANK_TOL times the
        largest.
    """
    A = _as_matrix(A)
    n, d = A.shape
    if d < n:
        raise ValueError(f"matrix must have at least as many columns as rows, got {n}x{d}")
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    if s[0] == 0.0 or s[-1] <= RANK_TOL * s[0]:
        raise RankDeficientError(
            f"smallest singular value {s[-1]:.3e} <= {RANK_TOL:g} * {s[0]:.3e}"
        )
    V = Vt.T
    flip = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(d)])
    flip[flip == 0] = 1.0
    V = V * flip
    U = U * flip[:n]
    return SvdSplit(U=U, sigma=s.copy(), V1=V[:, :n], V2=V[:, n:])


class ProblemInstance:
    """An underdetermined linear system (A, b) with full row rank.

    ``A`` is n x d with d >= n and rank n (verified numerically at
    construction); ``b`` is the length-n target. Arrays are copied and
    frozen. The SVD split, spectral norm and minimum-norm solution are
    computed once and cached.
    """

    def __init__(self, A, b):
        A = _as_matrix(A)
        b = np.asarray(b, dtype=float).reshape(-1)
        n, d = A.shape
        if n < 1:
            raise ValueError("matrix must have at least one row")
        if b.shape[0] != n:
            raise ValueError(f"b has length {b.shape[0]}, expected {n}")
        if not np.all(np.isfinite(b)):
            raise ValueError("b has non-finite entries")
        self._split = svd_split(A)
        A = A.copy()
        A.setflags(write=False)
        b = b.copy()
        b.setflags(write=False)
        self.A = A
        self.b = b
        self.n = n
        self.d = d

    @property
    def split(self) -> SvdSplit:
        return self._split

    @property
    def spectral_norm(self) -> float:
        return float(self._split.sigma[0])

    @property
    def theta_star(self) -> np.ndarray:
        """Cached minimum-norm solution; see :func:`min_norm_solution`."""
        cached = getattr(self, "_theta_star", None)
        if cached is None:
            cached = min_norm_solution(self)
            cached.setflags(write=False)
            self._theta_star = cached
        return cached

    def residual_norm(self, y: np.ndarray) -> float:
        return float(np.linalg.norm(self.A @ y - self.b))

    def __repr__(self):
        return f"ProblemInstance(n={self.n}, d={self.d})"


def min_norm_solution(p: ProblemInstance) -> np.ndarray:
    """Smallest-Euclidean-norm interpolant of A y = b.

    Computed as V1 diag(sigma)^-1 U^T b from the SVD rather than through
    the normal equations, whose condition number is squared.
    """
    sp = p.split
    return sp.V1 @ ((sp.U.T @ p.b) / sp.sigma)


def haar_orthogonal(gen: np.random.Generator, d: int) -> np.ndarray:
    """Rotation-invariant random d x d orthogonal matrix.

    QR of a Gaussian matrix with the R diagonal forced positive, which
    makes the distribution exactly Haar.
    """
    Q, R = np.linalg.qr(gen.standard_normal((d, d)))
    sign = np.sign(np.diagonal(R)).copy()
    sign[sign == 0] = 1.0
    return Q * sign


def random_orthogonal(d: int, rng: RngSpec) -> np.ndarray:
    """Seeded Haar-distributed orthogonal matrix (see :func:`haar_orthogonal`)."""
    if d < 1:
        raise ValueError("d must be positive")
    return haar_orthogonal(rng.generator(), d)


def random_problem(n: int, d: int, cond: float, rng: RngSpec) -> ProblemInstance:
    """Random full-row-rank instance with a prescribed condition number.

    A = U diag(sigma) V1^T with log-spaced singular values from 1 to
    ``cond`` and independent Haar-orthonormal factors; b is a unit Gaussian
    vector normalized to unit length.
    """
    if not (1 <= n <= d):
        raise ValueError(f"need 1 <= n <= d, got n={n}, d={d}")
    if cond < 1:
        raise ValueError(f"cond must be >= 1, got {cond}")
    gen = rng.generator()
    U = haar_orthogonal(gen, n)
    V1 = np.linalg.qr(gen.standard_normal((d, n)))[0]
    sigma = np.logspace(0.0, np.log10(cond), n)[::-1]
    A = U @ (sigma[:, None] * V1.T)
    b = gen.standard_normal(n)
    b = b / np.linalg.norm(b)
    return ProblemInstance(A, b)


def norms(M) -> MatrixNorms:
    """Spectral (largest singular value) and Frobenius norms of a matrix."""
    M = np.asarray(M, dtype=float)
    spectral = float(np.linalg.norm(M, 2)) if M.size else 0.0
    return MatrixNorms(spectral=spectral, frobenius=float(np.linalg.norm(M)))
