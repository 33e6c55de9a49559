"""Scikit-learn style estimators wrapping the solvers.

Each regressor fits an underdetermined linear model A coef = b by one of
the package's gradient-descent schemes; ``fit(X, y)`` treats the rows of
X as equations and y as the targets. They satisfy the usual estimator
contract (``get_params``/``set_params``, ``clone``, ``predict``/``score``)
so they compose with pipelines and model selection from the wider
ecosystem.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import deep, flat, hidden, stiefel
from .iterate import GdConfig
from .linalg import ProblemInstance
from .rng import RngSpec


class _GdRegressorBase(RegressorMixin, BaseEstimator):
    def __init__(self, alpha=None, max_iters=10_000, tol=1e-10, random_state=0):
        self.alpha = alpha
        self.max_iters = max_iters
        self.tol = tol
        self.random_state = random_state

    def _problem(self, X, y) -> ProblemInstance:
        X, y = check_X_y(X, y, y_numeric=True)
        return ProblemInstance(X, y)

    def _config(self) -> GdConfig:
        return GdConfig(alpha=self.alpha, max_iters=self.max_iters,
                        tol_residual=self.tol)

    def _rng(self) -> RngSpec:
        return RngSpec(self.random_state)

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_


class MinNormGDRegressor(_GdRegressorBase):
    """Plain gradient descent from the zero vector.

    Zero lies in the row space of X, so the fit converges to the
    minimum-norm interpolant without any explicit regularization.
    """

    def fit(self, X, y):
        p = self._problem(X, y)
        self.coef_, self.trace_ = flat.run_gd(np.zeros(p.d), p, self._config())
        self.n_iter_ = self.trace_.records[-1].k
        return self


class ControlledGDRegressor(_GdRegressorBase):
    """Gradient descent steered toward a chosen interpolating solution.

    ``target`` must solve X target = y; the fitted coefficients converge
    to it from a starting point computed by the controlled initializer.
    """

    def __init__(self, target=None, alpha=None, max_iters=10_000, tol=1e-10,
                 random_state=0):
        super().__init__(alpha=alpha, max_iters=max_iters, tol=tol,
                         random_state=random_state)
        self.target = target

    def fit(self, X, y):
        if self.target is None:
            raise ValueError("target must be set before fitting")
        p = self._problem(X, y)
        cfg = self._config()
        y0 = flat.controlled_init(p, np.asarray(self.target, dtype=float), cfg)
        self.coef_, self.trace_ = flat.run_gd(y0, p, cfg)
        self.n_iter_ = self.trace_.records[-1].k
        return self


class CompactOneHiddenRegressor(_GdRegressorBase):
    """Collapsed one-hidden-layer network (n + 2 state scalars).

    Equivalent to training the full d x d hidden layer from the rank-one
    row-space initialization, so it also converges to the minimum-norm
    interpolant, at O(max(n, T_A)) cost per iteration.
    """

    def fit(self, X, y):
        p = self._problem(X, y)
        self.coef_, self.trace_ = hidden.run_compact1(p, self._config(), self._rng())
        self.n_iter_ = self.trace_.records[-1].k
        return self


class CompactTwoHiddenRegressor(_GdRegressorBase):
    """Collapsed two-hidden-layer network (n + 2 state scalars)."""

    def fit(self, X, y):
        p = self._problem(X, y)
        self.coef_, self.trace_ = deep.run_compact2(p, self._config(), self._rng())
        self.n_iter_ = self.trace_.records[-1].k
        return self


class RiemannianLinearRegressor(_GdRegressorBase):
    """Deep linear network with orthogonal hidden layers.

    Hidden weights are optimized on the square Stiefel manifold from a
    random orthogonal initialization; the fitted coefficients are the
    final effective predictor, which need not be the minimum-norm
    solution.
    """

    def __init__(self, depth=1, alpha=None, max_iters=10_000, tol=1e-10,
                 random_state=0):
        super().__init__(alpha=alpha, max_iters=max_iters, tol=tol,
                         random_state=random_state)
        self.depth = depth

    def fit(self, X, y):
        p = self._problem(X, y)
        stack, self.trace_ = stiefel.run_riemannian(
            p, self.depth, self._config(), self._rng())
        self.stack_ = stack
        self.coef_ = stack.effective()
        self.n_iter_ = self.trace_.records[-1].k
        return self
