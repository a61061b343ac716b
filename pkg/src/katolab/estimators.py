"""scikit-learn transformers over flat grid functions.

Rows of ``X`` are flat samples on the operator's grid.  ``fit`` assembles
and factorizes the operator; it does not look at ``X`` beyond validating
its width.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive, check_samples
from .elliptic import CoefficientField, assemble
from .exceptions import NegativePowerOnKernel
from .grid import Grid
from .recipes import make_coefficients

__all__ = ["FractionalPowerTransformer", "ResolventTransformer"]


class _OperatorTransformer(TransformerMixin, BaseEstimator):
    def _build(self, X):
        if self.coefficients is not None:
            if not isinstance(self.coefficients, CoefficientField):
                raise TypeError("coefficients must be a CoefficientField")
            A = self.coefficients
        else:
            grid = Grid(self.dim, self.points_per_side, self.side_length)
            A = make_coefficients(grid, self.recipe, **(self.recipe_params or {}))
        self.operator_ = assemble(A, self.kappa)
        self.grid_ = A.grid
        self.factorization_ = self.operator_.factorization
        self.n_features_in_ = self.grid_.size
        if X is not None:
            check_samples(X, self.grid_)
        return self

    def _samples(self, X) -> np.ndarray:
        check_is_fitted(self, "factorization_")
        # factorization helpers batch over trailing axes, so work on columns
        return check_samples(X, self.grid_).T


class FractionalPowerTransformer(_OperatorTransformer):
    """Apply ``L^alpha`` (principal branch) to each row of ``X``.

    Parameters
    ----------
    alpha : float in [-1, 1]
    recipe, recipe_params, dim, points_per_side, side_length
        Coefficient field built with :func:`katolab.recipes.make_coefficients`.
    coefficients : CoefficientField, optional
        Overrides the recipe parameters when given.
    kappa : float
        Zeroth-order term.
    """

    def __init__(
        self,
        alpha: float = 0.5,
        recipe: str = "identity",
        recipe_params: dict | None = None,
        dim: int = 1,
        points_per_side: int = 32,
        side_length: float = 1.0,
        coefficients: CoefficientField | None = None,
        kappa: float = 0.0,
    ):
        self.alpha = alpha
        self.recipe = recipe
        self.recipe_params = recipe_params
        self.dim = dim
        self.points_per_side = points_per_side
        self.side_length = side_length
        self.coefficients = coefficients
        self.kappa = kappa

    def fit(self, X=None, y=None):
        if not -1.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [-1, 1]")
        return self._build(X)

    def _power(self, alpha: float, X):
        cols = self._samples(X)
        F = self.factorization_
        if alpha < 0 and F.deflated:
            k = np.abs(F.split(cols)[0])
            if np.any(k > 1e-10 * np.maximum(np.linalg.norm(cols, axis=0), 1e-300)):
                raise NegativePowerOnKernel("a sample has a constant component")
        return F.power(alpha, cols).T

    def transform(self, X):
        return self._power(self.alpha, X)

    def inverse_transform(self, X):
        """``L^{-alpha}``; inverts :meth:`transform` on mean-zero samples when ``kappa == 0``."""
        return self._power(-self.alpha, X)


class ResolventTransformer(_OperatorTransformer):
    """Apply ``(I + t^2 L)^{-1}`` to each row of ``X``."""

    def __init__(
        self,
        t: float = 0.1,
        recipe: str = "identity",
        recipe_params: dict | None = None,
        dim: int = 1,
        points_per_side: int = 32,
        side_length: float = 1.0,
        coefficients: CoefficientField | None = None,
        kappa: float = 0.0,
    ):
        self.t = t
        self.recipe = recipe
        self.recipe_params = recipe_params
        self.dim = dim
        self.points_per_side = points_per_side
        self.side_length = side_length
        self.coefficients = coefficients
        self.kappa = kappa

    def fit(self, X=None, y=None):
        check_positive(self.t, "t")
        return self._build(X)

    def transform(self, X):
        cols = self._samples(X)
        return self.operator_.resolvent_solve(self.t, cols).T
