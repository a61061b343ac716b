"""Holomorphic functional calculus for assembled elliptic operators.

The operator is Schur-factorized in the Fourier basis.  When ``kappa == 0``
the constants form the kernel of both ``L`` and ``L*``, so the zero Fourier
mode splits off exactly and the factorization runs on the mean-zero
complement only.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from ._validation import as_grid_function, check_positive
from .elliptic import EllipticOperator, sesquilinear_form
from .exceptions import (
    FactorizationFailure,
    NegativePowerOnKernel,
    TGridTooNarrow,
    ZeroGradient,
)
from .grid import GridFunction, dft_matrix, gradient, gradient_values, l2_norm

__all__ = [
    "SpectralFactorization",
    "TGrid",
    "factorize",
    "sqrt_apply",
    "fractional_power_apply",
    "mcintosh_yagi_norm",
    "kato_ratio",
    "kato_ratios",
    "critical_exponent_scan",
]

_KERNEL_TOL = 1e-10


class SpectralFactorization:
    """``L = W^H [kernel (+) Z T Z^H] W``: unitary DFT ``W``, unitary ``Z``, upper-triangular ``T``.

    ``T`` is diagonal when ``L`` is self-adjoint.  Functions of ``L`` are
    evaluated on ``T`` (elementwise when diagonal, by triangular algorithms
    otherwise); an eigenvector basis is never formed, since eigenvalue
    condition numbers of non-normal divergence-form operators are large.
    """

    def __init__(self, operator: EllipticOperator, schur_vectors, triangular, deflated: bool, normal: bool):
        self.operator = operator
        self.grid = operator.grid
        self.Z = schur_vectors
        self.T = triangular
        self.deflated = deflated
        self.normal = normal
        self.eigenvalues = np.diag(triangular).copy()
        self._power_cache: dict[float, np.ndarray] = {}

    @property
    def kernel_dim(self) -> int:
        return 1 if self.deflated else 0

    @cached_property
    def max_abs_argument(self) -> float:
        return float(np.max(np.abs(np.angle(self.eigenvalues))))

    def split(self, values: np.ndarray):
        """(kernel coefficient, Schur coordinates) of flat values, batched over trailing axes."""
        coeffs = self.grid.fft(values)
        if self.deflated:
            return coeffs[0], self.Z.conj().T @ coeffs[1:]
        return None, self.Z.conj().T @ coeffs

    def merge(self, kernel_part, coords) -> np.ndarray:
        body = self.Z @ coords
        if self.deflated:
            coeffs = np.concatenate([np.asarray(kernel_part)[None, ...], body], axis=0)
        else:
            coeffs = body
        return self.grid.ifft(coeffs)

    def _triangular_function(self, fn) -> np.ndarray:
        if self.normal:
            return np.diag(fn(self.eigenvalues))
        return sla.funm(self.T, fn)

    def triangular_power(self, alpha: float) -> np.ndarray:
        """``T^alpha`` (principal branch), cached per exponent."""
        alpha = float(alpha)
        P = self._power_cache.get(alpha)
        if P is None:
            if self.normal:
                P = np.diag(self.eigenvalues**alpha)
            elif alpha == 0.5:
                P = sla.sqrtm(self.T)
            elif alpha == 1.0:
                P = self.T.copy()
            elif alpha == -1.0:
                P = sla.solve_triangular(self.T, np.eye(self.T.shape[0]))
            else:
                P = sla.fractional_matrix_power(self.T, alpha)
            self._power_cache[alpha] = P
        return P

    def apply(self, fn, values: np.ndarray, kernel_value: complex | None = None) -> np.ndarray:
        """``fn(L)`` applied to flat values; ``kernel_value`` is ``fn(0)`` on the constants.

        Non-normal operators go through Schur-Parlett (``scipy.linalg.funm``);
        prefer :meth:`power` and :meth:`resolvent_many` where they apply.
        """
        k, c = self.split(values)
        out = self._triangular_function(fn) @ c
        if self.deflated:
            if kernel_value is None:
                kernel_value = complex(np.asarray(fn(np.array([0j])))[0])
            k = kernel_value * k
        return self.merge(k, out)

    def power(self, alpha: float, values: np.ndarray) -> np.ndarray:
        """``L^alpha`` on flat values; constants are sent to 0 (``alpha != 0``)."""
        k, c = self.split(values)
        out = self.triangular_power(alpha) @ c
        if self.deflated:
            k = (1.0 if alpha == 0 else 0.0) * k
        return self.merge(k, out)

    def resolvent_coords(self, coords: np.ndarray, ts, premultiply: bool = False) -> np.ndarray:
        """Schur coordinates of ``(I + t^2 L)^{-1} [L] v`` for each ``t``; shape ``(len(ts),) + coords.shape``."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        rhs = self.T @ coords if premultiply else coords
        out = np.empty((ts.size,) + coords.shape, dtype=complex)
        if self.normal:
            w = self.eigenvalues.reshape((-1,) + (1,) * (coords.ndim - 1))
            for i, t in enumerate(ts):
                out[i] = rhs / (1 + t**2 * w)
            return out
        n = self.T.shape[0]
        eye = np.eye(n)
        for i, t in enumerate(ts):
            out[i] = sla.solve_triangular(eye + t**2 * self.T, rhs, check_finite=False)
        return out

    def resolvent_many(self, values: np.ndarray, ts, premultiply: bool = False) -> np.ndarray:
        """``(I + t^2 L)^{-1} [L] v`` for each ``t``, shape ``(len(ts), size)`` for a flat ``v``."""
        k, c = self.split(values)
        coords = self.resolvent_coords(c, ts, premultiply)
        kern = 0.0 if premultiply else k
        return np.stack([self.merge(kern if k is not None else None, coords[i]) for i in range(coords.shape[0])])

    def kernel_component(self, values: np.ndarray) -> complex:
        """Coefficient of ``values`` along the normalized constant function (0 if no kernel)."""
        if not self.deflated:
            return 0.0
        return complex(self.grid.fft(values)[0])

    def spectral_range(self) -> tuple[float, float]:
        a = np.abs(self.eigenvalues)
        return float(a.min()), float(a.max())


def factorize(L: EllipticOperator) -> SpectralFactorization:
    """Schur-factorize ``L`` in the Fourier basis; fail if the spectrum leaves the sector."""
    grid = L.grid
    W = dft_matrix(grid)
    Lhat = W @ L.matrix @ W.conj().T
    deflated = L.kappa == 0.0
    if deflated:
        leak = max(np.max(np.abs(Lhat[0])), np.max(np.abs(Lhat[:, 0])))
        if leak > 1e-9 * max(np.max(np.abs(Lhat)), 1.0):
            raise FactorizationFailure("constants are not in the kernel of L")
        Lhat = Lhat[1:, 1:]
    normal = L.is_self_adjoint
    if normal:
        Lhat = 0.5 * (Lhat + Lhat.conj().T)
        w, Z = np.linalg.eigh(Lhat)
        T = np.diag(w.astype(complex))
    else:
        T, Z = sla.schur(Lhat, output="complex", check_finite=False)
    w = np.diag(T)
    scale = np.max(np.abs(w))
    if np.min(w.real) < -1e-9 * scale:
        raise FactorizationFailure(f"eigenvalue with real part {np.min(w.real):.3g} (scale {scale:.3g})")
    if np.any(np.abs(w) <= 1e-12 * scale):
        raise FactorizationFailure("unexpected near-zero eigenvalue off the constants")
    if not normal and np.max(np.abs(np.angle(w))) >= np.pi / 2:
        raise FactorizationFailure("spectrum is not contained in an open sector of half-angle < pi/2")
    return SpectralFactorization(L, Z, T, deflated, normal)


def _factorization(F_or_L) -> SpectralFactorization:
    if isinstance(F_or_L, SpectralFactorization):
        return F_or_L
    return F_or_L.factorization


def sqrt_apply(F, f) -> GridFunction:
    """Principal square root (branch with nonnegative real part)."""
    F = _factorization(F)
    f = as_grid_function(f, F.grid)
    return GridFunction(F.grid, F.power(0.5, f.values))


def fractional_power_apply(F, alpha: float, f) -> GridFunction:
    """Principal ``L^alpha f`` for ``alpha`` in ``[-1, 1]``."""
    F = _factorization(F)
    if not -1.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [-1, 1]")
    f = as_grid_function(f, F.grid)
    if alpha == 0:
        return f
    if alpha < 0 and F.deflated:
        k = abs(F.kernel_component(f.values))
        if k > _KERNEL_TOL * max(np.linalg.norm(f.values), 1e-300):
            raise NegativePowerOnKernel(f"negative power applied to a function with constant component {k:.3g}")
    return GridFunction(F.grid, F.power(alpha, f.values))


@dataclass(frozen=True)
class TGrid:
    """Log-uniform nodes for integrals against ``dt/t``."""

    t_min: float
    t_max: float
    points: int = 256

    def __post_init__(self):
        check_positive(self.t_min, "t_min")
        check_positive(self.t_max, "t_max")
        if not self.t_min < self.t_max:
            raise ValueError("t_min must be smaller than t_max")
        if self.points < 16:
            raise ValueError("a TGrid needs at least 16 points")

    @classmethod
    def spanning(cls, L_or_F, decades: float = 6.0, points: int = 256) -> "TGrid":
        """Grid covering ``1/sqrt(|spectrum|)`` with the spare decades split evenly on both sides."""
        F = _factorization(L_or_F)
        lo, hi = F.spectral_range()
        t_lo, t_hi = 1 / np.sqrt(hi), 1 / np.sqrt(lo)
        spare = decades - np.log10(t_hi / t_lo)
        if spare < 0:
            raise TGridTooNarrow(f"{decades} decades cannot span the spectrum")
        pad = 10 ** (spare / 2)
        return cls(t_lo / pad, t_hi * pad, points)

    @cached_property
    def t(self) -> np.ndarray:
        return np.geomspace(self.t_min, self.t_max, self.points)

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid weights in ``log t``: ``sum(w * g(t)) ~ int g(t) dt/t``."""
        h = np.log(self.t_max / self.t_min) / (self.points - 1)
        w = np.full(self.points, h)
        w[0] = w[-1] = h / 2
        return w

    @property
    def decades(self) -> float:
        return float(np.log10(self.t_max / self.t_min))

    def integrate(self, values: np.ndarray) -> float | np.ndarray:
        return np.tensordot(self.weights, values, axes=(0, 0))


def _check_tgrid(F: SpectralFactorization, tg: TGrid):
    lo, hi = F.spectral_range()
    if tg.t_min > 1 / np.sqrt(hi) * (1 + 1e-12) or tg.t_max < 1 / np.sqrt(lo) * (1 - 1e-12):
        raise TGridTooNarrow(
            f"TGrid [{tg.t_min:.3g}, {tg.t_max:.3g}] does not cover [{1/np.sqrt(hi):.3g}, {1/np.sqrt(lo):.3g}]"
        )


def mcintosh_yagi_norm(L, f, tg: TGrid, return_tail: bool = False):
    """Square root of the quadrature of ``||(I + t^2 L)^{-1} t L f||^2 dt/t``.

    With ``return_tail`` also returns a first-order estimate of the mass
    outside ``[t_min, t_max]``: ``t_min^2 ||Lf||^2 / 2 + ||f - mean||^2 / (2 t_max^2)``.
    """
    F = _factorization(L)
    f = as_grid_function(f, F.grid)
    _check_tgrid(F, tg)
    _, c = F.split(f.values)
    coords = F.resolvent_coords(c, tg.t, premultiply=True) * tg.t[:, None]
    sq = np.sum(np.abs(coords) ** 2, axis=1) * F.grid.cell_volume
    total = float(tg.integrate(sq))
    if not return_tail:
        return float(np.sqrt(total))
    Lf = F.operator.matrix @ f.values
    centred = f.values - np.mean(f.values) if F.deflated else f.values
    tail = 0.5 * tg.t_min**2 * l2_norm(GridFunction(F.grid, Lf)) ** 2 + 0.5 * l2_norm(
        GridFunction(F.grid, centred)
    ) ** 2 / tg.t_max**2
    return float(np.sqrt(total)), float(tail)


def kato_ratio(L, f) -> float:
    """``||L^{1/2} f|| / ||grad f||``."""
    F = _factorization(L)
    f = as_grid_function(f, F.grid)
    g = l2_norm(gradient(f))
    if g <= 1e-13 * max(l2_norm(f), 1e-300) / F.grid.side_length:
        raise ZeroGradient("f is constant")
    return l2_norm(sqrt_apply(F, f)) / g


def kato_ratios(L, fs) -> np.ndarray:
    """:func:`kato_ratio` for each row of a ``(K, size)`` array."""
    F = _factorization(L)
    grid = F.grid
    cols = np.asarray(fs, dtype=complex).T
    sq = np.sqrt(np.sum(np.abs(F.power(0.5, cols)) ** 2, axis=0))
    gr = np.sqrt(np.sum(np.abs(gradient_values(grid, cols)) ** 2, axis=(0, 1)))
    if np.any(gr <= 1e-13 * np.maximum(np.sqrt(np.sum(np.abs(cols) ** 2, axis=0)), 1e-300) / grid.side_length):
        raise ZeroGradient("a sample is constant")
    return sq / gr


def self_adjoint_defect(L: EllipticOperator, f) -> float:
    """``| ||L^{1/2} f||^2 - Re Q(f, f) | / Re Q(f, f)``, zero for Hermitian coefficients."""
    q = sesquilinear_form(L, f, f).real
    return abs(l2_norm(sqrt_apply(L, f)) ** 2 - q) / q


def critical_exponent_scan(a: GridFunction, alphas) -> list[tuple[float, float]]:
    """Operator norm of ``L^alpha (I - Laplacian)^{-alpha}`` for ``L = D a D`` in 1-D.

    This is the supremum over all ``f`` of ``||L^alpha f|| / ||f||_{H^{2 alpha}}``,
    obtained exactly from the largest singular value.
    """
    from .elliptic import CoefficientField, assemble

    grid = a.grid
    if grid.dim != 1:
        raise ValueError("critical_exponent_scan requires a 1-D grid")
    if np.max(np.abs(a.values.imag)) > 0 or np.min(a.values.real) < 1 - 1e-12:
        raise ValueError("a must be real with a >= 1")
    L = assemble(CoefficientField(grid, a.values.real))
    F = L.factorization
    W = dft_matrix(grid)
    xi2 = grid.wavenumber_squared
    rows = []
    for alpha in alphas:
        alpha = float(alpha)
        if not 0 <= alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        bessel = (1 + xi2) ** (-alpha)
        # columns: L^alpha applied to W^H diag(bessel) e_k
        cols = W.conj().T * bessel[None, :]
        power = F.power(alpha, cols)
        rows.append((alpha, float(np.linalg.norm(power, 2))))
    return rows
