"""Input validation helpers shared by the library and the estimator API."""
from __future__ import annotations

import numbers

import numpy as np

from .exceptions import GridMismatch
from .grid import Grid, GridFunction, VectorField


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite real, got {value!r}")
    return float(value)


def check_open_unit(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not 0 < value < 1:
        raise ValueError(f"{name} must lie in (0, 1), got {value!r}")
    return float(value)


def check_same_grid(*objs) -> Grid:
    grids = {o.grid for o in objs}
    if len(grids) != 1:
        raise GridMismatch("arguments live on different grids")
    return grids.pop()


def as_grid_function(u, grid: Grid) -> GridFunction:
    if isinstance(u, GridFunction):
        if u.grid != grid:
            raise GridMismatch("grid function lives on a different grid")
        return u
    return GridFunction(grid, u)


def as_vector_field(F, grid: Grid) -> VectorField:
    if isinstance(F, VectorField):
        if F.grid != grid:
            raise GridMismatch("vector field lives on a different grid")
        return F
    return VectorField(grid, F)


def check_samples(X, grid: Grid) -> np.ndarray:
    """Validate a sample matrix whose rows are flat grid functions.

    Accepts complex input (``sklearn.utils.check_array`` rejects it) and a
    single 1-D sample, which is promoted to one row.
    """
    X = np.asarray(X)
    if X.dtype == object:
        raise TypeError("sample matrix must be numeric")
    X = X.astype(complex, copy=False)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D sample matrix, got shape {X.shape}")
    if X.shape[1] != grid.size:
        raise ValueError(f"each sample must have {grid.size} values, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("sample matrix contains NaN or inf")
    return X
