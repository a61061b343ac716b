"""Divergence-form operators ``L = -div A grad (+ kappa)`` on the torus.

``L`` is assembled as ``G^H diag(A) G + kappa I`` where ``G`` stacks the
spectral partial derivatives, so ``<Lf, g> = <A grad f, grad g> + kappa <f, g>``
holds to rounding and the discrete Garding inequality is structural.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from ._validation import as_grid_function, check_positive
from .exceptions import GridMismatch, NotElliptic, SolverBreakdown
from .grid import (
    Box,
    Grid,
    GridFunction,
    gradient_matrices,
    gradient_values,
)

__all__ = [
    "EllipticityBounds",
    "CoefficientField",
    "EllipticOperator",
    "GaffneyProfile",
    "check_ellipticity",
    "assemble",
    "sesquilinear_form",
    "adjoint",
    "resolvent_apply",
    "gaffney_profile",
    "lipschitz_resolvent_check",
]


@dataclass(frozen=True)
class EllipticityBounds:
    lower: float
    upper: float
    kappa: float = 0.0

    def __post_init__(self):
        if not (0 < self.lower <= self.upper * (1 + 1e-12)):
            raise ValueError(f"need 0 < lower <= upper, got ({self.lower}, {self.upper})")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")


class CoefficientField:
    """Pointwise ``dim x dim`` complex coefficient matrices, stored ``(size, dim, dim)``.

    Scalar input of shape ``(size,)`` or the grid shape is read as ``a(x) I``.
    """

    def __init__(self, grid: Grid, values):
        arr = np.asarray(values, dtype=complex)
        d, m = grid.dim, grid.size
        if arr.shape in ((m,), grid.shape):
            arr = arr.reshape(m)[:, None, None] * np.eye(d)
        elif arr.shape == grid.shape + (d, d):
            arr = arr.reshape(m, d, d)
        elif arr.shape == (d, d):
            arr = np.broadcast_to(arr, (m, d, d))
        elif arr.shape != (m, d, d):
            raise ValueError(f"cannot read coefficient array of shape {arr.shape} on {grid}")
        arr = np.array(arr, dtype=complex)
        arr.setflags(write=False)
        self.grid = grid
        self.values = arr

    @classmethod
    def identity(cls, grid: Grid) -> "CoefficientField":
        return cls(grid, np.eye(grid.dim))

    @cached_property
    def bounds(self) -> EllipticityBounds:
        return check_ellipticity(self)

    def adjoint(self) -> "CoefficientField":
        return CoefficientField(self.grid, np.conj(np.swapaxes(self.values, 1, 2)))

    def is_hermitian(self, tol: float = 1e-14) -> bool:
        return bool(np.max(np.abs(self.values - np.conj(np.swapaxes(self.values, 1, 2)))) <= tol)

    def is_constant(self, tol: float = 1e-14) -> bool:
        return bool(np.max(np.abs(self.values - self.values[:1])) <= tol)

    def apply(self, components: np.ndarray) -> np.ndarray:
        """``(A F)(x)`` for ``F`` of shape ``(dim, size, *batch)``."""
        return np.einsum("xjl,lx...->jx...", self.values, components)

    def sup_norm(self) -> float:
        """``max_x |A(x)|_op``."""
        return float(np.max(np.linalg.norm(self.values, ord=2, axis=(1, 2))))

    def __sub__(self, other: "CoefficientField") -> "CoefficientField":
        if other.grid != self.grid:
            raise GridMismatch("coefficient fields live on different grids")
        return CoefficientField(self.grid, self.values - other.values)


def check_ellipticity(A: CoefficientField, kappa: float = 0.0) -> EllipticityBounds:
    """Tightest pointwise ``(lower, upper)``: min eigenvalue of the Hermitian part, max operator norm."""
    herm = 0.5 * (A.values + np.conj(np.swapaxes(A.values, 1, 2)))
    lower = float(np.min(np.linalg.eigvalsh(herm)))
    if lower <= 0:
        raise NotElliptic(f"Hermitian part has eigenvalue {lower:.3g} <= 0")
    upper = A.sup_norm()
    return EllipticityBounds(lower, max(upper, lower), float(kappa))


class EllipticOperator:
    """Assembled dense matrix of ``-div A grad + kappa`` acting on flat grid values."""

    def __init__(self, coefficients: CoefficientField, kappa: float = 0.0):
        if kappa < 0:
            raise ValueError("kappa must be nonnegative")
        self.coefficients = coefficients
        self.kappa = float(kappa)
        self.bounds = check_ellipticity(coefficients, kappa)
        self._lu_cache: dict[float, tuple] = {}
        self._lock = threading.Lock()

    @property
    def grid(self) -> Grid:
        return self.coefficients.grid

    @cached_property
    def matrix(self) -> np.ndarray:
        G = gradient_matrices(self.grid)
        A = self.coefficients.values
        mat = np.zeros((self.grid.size, self.grid.size), dtype=complex)
        for j in range(self.grid.dim):
            AG = sum(A[:, j, l][:, None] * G[l] for l in range(self.grid.dim))
            mat += G[j].conj().T @ AG
        if self.kappa:
            mat += self.kappa * np.eye(self.grid.size)
        mat.setflags(write=False)
        return mat

    @property
    def is_self_adjoint(self) -> bool:
        return self.coefficients.is_hermitian()

    @cached_property
    def factorization(self):
        from .funcalc import factorize

        return factorize(self)

    def apply(self, f) -> GridFunction:
        f = as_grid_function(f, self.grid)
        return GridFunction(self.grid, self.matrix @ f.values)

    def _resolvent_lu(self, t: float):
        key = float(t)
        with self._lock:
            lu = self._lu_cache.get(key)
        if lu is None:
            system = np.eye(self.grid.size) + key**2 * self.matrix
            lu = sla.lu_factor(system, check_finite=False)
            with self._lock:
                if len(self._lu_cache) > 64:
                    self._lu_cache.clear()
                self._lu_cache[key] = lu
        return lu

    def resolvent_solve(self, t: float, rhs: np.ndarray) -> np.ndarray:
        """Solve ``(I + t^2 L) u = rhs`` for flat ``rhs`` (columns batched)."""
        u = sla.lu_solve(self._resolvent_lu(t), rhs, check_finite=False)
        if not np.all(np.isfinite(u)):
            raise SolverBreakdown(f"resolvent solve produced non-finite values at t={t}")
        return u

    def __repr__(self):
        b = self.bounds
        return f"EllipticOperator(grid={self.grid!r}, lower={b.lower:.4g}, upper={b.upper:.4g}, kappa={self.kappa})"


def assemble(A: CoefficientField, kappa: float = 0.0) -> EllipticOperator:
    return EllipticOperator(A, kappa)


def adjoint(L: EllipticOperator) -> EllipticOperator:
    return EllipticOperator(L.coefficients.adjoint(), L.kappa)


def sesquilinear_form(L: EllipticOperator, f, g) -> complex:
    """``Q(f, g) = <A grad f, grad g> + kappa <f, g>`` evaluated without the matrix."""
    f = as_grid_function(f, L.grid)
    g = as_grid_function(g, L.grid)
    grid = L.grid
    Af = L.coefficients.apply(gradient_values(grid, f.values))
    dg = gradient_values(grid, g.values)
    q = np.vdot(dg.ravel(), Af.ravel()) + L.kappa * np.vdot(g.values, f.values)
    return complex(q * grid.cell_volume)


def resolvent_apply(L: EllipticOperator, t: float, f) -> GridFunction:
    """``(I + t^2 L)^{-1} f`` by a cached dense LU factorization."""
    t = check_positive(t, "t")
    f = as_grid_function(f, L.grid)
    return GridFunction(L.grid, L.resolvent_solve(t, f.values))


@dataclass
class GaffneyProfile:
    """Off-diagonal ratios for the three resolvent families at each ``t``."""

    distance: float
    t: np.ndarray
    ratios: dict = field(default_factory=dict)

    @property
    def scaled_distance(self) -> np.ndarray:
        return self.distance / self.t

    def slope(self, variant: str) -> float:
        """Least-squares slope of ``log(ratio)`` against ``d/t``."""
        r = np.maximum(self.ratios[variant], np.finfo(float).tiny)
        return float(np.polyfit(self.scaled_distance, np.log(r), 1)[0])

    def slopes(self) -> dict:
        return {name: self.slope(name) for name in self.ratios}


GAFFNEY_VARIANTS = ("resolvent", "gradient", "divergence")


def gaffney_profile(L: EllipticOperator, E: Box, E0: Box, t_list) -> GaffneyProfile:
    """Exact ``sup ||1_E T_t f||^2 / ||f||^2`` over ``f`` supported in ``E0``.

    The supremum is the squared largest singular value of the restricted
    block, computed by SVD for ``T_t`` in (resolvent, ``t grad`` resolvent,
    resolvent ``t div(A .)``).
    """
    grid = L.grid
    d = E.distance(E0, grid)
    rows = E.indices(grid)
    cols = E0.indices(grid)
    G = gradient_matrices(grid)
    A = L.coefficients.values
    eye_cols = np.zeros((grid.size, cols.size), dtype=complex)
    eye_cols[cols, np.arange(cols.size)] = 1.0
    # columns of div(A F) for F = e_l delta_y, y in E0
    div_rhs = np.concatenate(
        [sum(G[j][:, cols] * A[cols, j, l][None, :] for j in range(grid.dim)) for l in range(grid.dim)],
        axis=1,
    )
    ts = np.asarray(sorted(float(t) for t in t_list))
    out = {name: np.empty(ts.size) for name in GAFFNEY_VARIANTS}
    for i, t in enumerate(ts):
        check_positive(t, "t")
        X = L.resolvent_solve(t, eye_cols)
        out["resolvent"][i] = _top_sv2(X[rows])
        grad_block = np.concatenate([t * (G[j][rows] @ X) for j in range(grid.dim)], axis=0)
        out["gradient"][i] = _top_sv2(grad_block)
        Y = t * L.resolvent_solve(t, div_rhs)
        out["divergence"][i] = _top_sv2(Y[rows])
    return GaffneyProfile(d, ts, out)


def _top_sv2(block: np.ndarray) -> float:
    return float(np.linalg.norm(block, 2) ** 2)


def lipschitz_resolvent_check(L: EllipticOperator, Q: Box, t: float, f) -> tuple[float, float]:
    """Normalized ``L^2(Q)`` sizes of ``R f - f`` and of its gradient, ``R = (I + t^2 L)^{-1}``."""
    grid = L.grid
    t = check_positive(t, "t")
    if t > Q.side(grid) * (1 + 1e-12):
        raise ValueError(f"t={t} exceeds the side of Q ({Q.side(grid)})")
    f = as_grid_function(f, grid)
    grad_f = gradient_values(grid, f.values)
    lip = float(np.max(np.sqrt(np.sum(np.abs(grad_f) ** 2, axis=0))))
    diff = L.resolvent_solve(t, f.values) - f.values
    if lip <= 1e-12 * max(np.max(np.abs(f.values)), 1.0) / grid.spacing:
        return 0.0, 0.0
    idx = Q.indices(grid)
    vol = Q.volume(grid)
    dv = grid.cell_volume
    c1 = np.sum(np.abs(diff[idx]) ** 2) * dv / (t**2 * lip**2 * vol)
    grad_diff = gradient_values(grid, diff)
    c2 = np.sum(np.abs(grad_diff[:, idx]) ** 2) * dv / (lip**2 * vol)
    return float(c1), float(c2)
