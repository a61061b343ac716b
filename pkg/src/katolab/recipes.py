"""Named coefficient-field generators and random test functions.

Smooth recipes are trigonometric polynomials in ``x / side_length`` with
seeded coefficients, so the same seed gives the same continuum field on
every grid; refinement studies rely on that.
"""
from __future__ import annotations

import numpy as np

from .elliptic import CoefficientField
from .grid import Grid, GridFunction

__all__ = [
    "identity",
    "diagonal_rough",
    "smooth_complex",
    "random_elliptic",
    "hermitian_elliptic",
    "make_coefficients",
    "random_band_limited",
    "RECIPES",
]

_REFERENCE_POINTS = 64


def _modes(dim: int, max_mode: int) -> np.ndarray:
    r = np.arange(-max_mode, max_mode + 1)
    mesh = np.meshgrid(*([r] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _trig_field(rng: np.random.Generator, dim: int, max_mode: int, n_fields: int):
    """Seeded random complex trigonometric polynomials, decaying with mode size."""
    modes = _modes(dim, max_mode)
    decay = 1.0 / (1.0 + np.sum(modes**2, axis=1))
    coeffs = (rng.standard_normal((n_fields, len(modes))) + 1j * rng.standard_normal((n_fields, len(modes)))) * decay

    def evaluate(grid: Grid, points_per_side: int | None = None):
        n = points_per_side or grid.points_per_side
        axis = np.arange(n) / n
        mesh = np.meshgrid(*([axis] * dim), indexing="ij")
        x = np.stack([m.ravel() for m in mesh])
        phase = np.exp(2j * np.pi * modes @ x)
        return coeffs @ phase

    return evaluate


def identity(grid: Grid) -> CoefficientField:
    return CoefficientField.identity(grid)


def diagonal_rough(grid: Grid, low: float = 1.0, high: float = 2.0, seed: int = 0, pieces: int | None = None):
    """Real ``a(x) I`` with i.i.d. values in ``[low, high]`` per cell.

    With ``pieces`` the values are constant on a fixed ``pieces``-per-side
    partition, which keeps the field grid-independent under refinement.
    """
    rng = np.random.default_rng(seed)
    n = grid.points_per_side
    if pieces is None:
        vals = rng.uniform(low, high, size=grid.shape)
    else:
        if n % pieces:
            raise ValueError("pieces must divide points_per_side")
        coarse = rng.uniform(low, high, size=(pieces,) * grid.dim)
        vals = coarse
        for axis in range(grid.dim):
            vals = np.repeat(vals, n // pieces, axis=axis)
    return CoefficientField(grid, vals.astype(complex))


def smooth_complex(grid: Grid, amplitude: float = 0.3, seed: int = 0, max_mode: int = 2):
    """``I + amplitude * P(x)`` with ``P`` smooth, complex and ``max |P| = 1`` pointwise in entries."""
    rng = np.random.default_rng(seed)
    d = grid.dim
    field = _trig_field(rng, d, max_mode, d * d)
    ref = field(grid, _REFERENCE_POINTS)
    scale = np.max(np.abs(ref))
    P = field(grid).T.reshape(grid.size, d, d) / scale
    return CoefficientField(grid, np.eye(d) + amplitude * P)


def random_elliptic(grid: Grid, lam: float = 0.5, Lam: float = 2.0, seed: int = 0, max_mode: int = 2):
    """Smooth complex field with Hermitian part ``>= lam`` and pointwise norm ``<= Lam``.

    Built as ``H + iS`` with ``H = lam I + c B B^H`` and ``S`` Hermitian, both
    scaled against a fixed reference grid.
    """
    if not 0 < lam < Lam:
        raise ValueError("need 0 < lam < Lam")
    rng = np.random.default_rng(seed)
    d = grid.dim
    bfield = _trig_field(rng, d, max_mode, d)
    sfield = _trig_field(rng, d, max_mode, d * d)

    def build(values_b, values_s):
        m = values_b.shape[1]
        B = values_b.T.reshape(m, d, 1)
        P = B @ np.conj(np.swapaxes(B, 1, 2))
        S = values_s.T.reshape(m, d, d)
        S = 0.5 * (S + np.conj(np.swapaxes(S, 1, 2)))
        return P, S

    P_ref, S_ref = build(bfield(grid, _REFERENCE_POINTS), sfield(grid, _REFERENCE_POINTS))
    p_scale = np.max(np.linalg.norm(P_ref, 2, axis=(1, 2)))
    s_scale = np.max(np.linalg.norm(S_ref, 2, axis=(1, 2)))
    h_span = 0.5 * (Lam - lam)
    s_span = 0.95 * (Lam - lam - h_span)
    P, S = build(bfield(grid), sfield(grid))
    H = lam * np.eye(d) + h_span * P / p_scale
    A = H + 1j * s_span * S / s_scale
    return CoefficientField(grid, A)


def hermitian_elliptic(grid: Grid, lam: float = 0.5, Lam: float = 2.0, seed: int = 0, max_mode: int = 2):
    """Self-adjoint variant: the Hermitian part of :func:`random_elliptic`, rescaled into ``[lam, Lam]``."""
    A = random_elliptic(grid, lam, Lam, seed, max_mode).values
    H = 0.5 * (A + np.conj(np.swapaxes(A, 1, 2)))
    return CoefficientField(grid, H)


RECIPES = {
    "identity": identity,
    "diagonal-rough": diagonal_rough,
    "smooth-complex": smooth_complex,
    "random-elliptic": random_elliptic,
    "hermitian-elliptic": hermitian_elliptic,
}


def make_coefficients(grid: Grid, recipe: str, **params) -> CoefficientField:
    try:
        factory = RECIPES[recipe]
    except KeyError:
        raise ValueError(f"unknown coefficient recipe {recipe!r}; known: {sorted(RECIPES)}") from None
    return factory(grid, **params)


def random_band_limited(grid: Grid, rng: np.random.Generator, max_mode: int = 4, mean_zero: bool = False) -> GridFunction:
    """Random complex trigonometric polynomial with modes ``|k|_inf <= max_mode``.

    The coefficients drawn from ``rng`` do not depend on the grid, so equal
    generator states give the same function on any grid that resolves it.
    """
    if 2 * max_mode >= grid.points_per_side:
        raise ValueError("max_mode too large for the grid")
    modes = _modes(grid.dim, max_mode)
    coeffs = rng.standard_normal(len(modes)) + 1j * rng.standard_normal(len(modes))
    if mean_zero:
        coeffs[np.all(modes == 0, axis=1)] = 0.0
    phase = np.exp(2j * np.pi * modes @ (grid.coordinates / grid.side_length))
    return GridFunction(grid, coeffs @ phase)
