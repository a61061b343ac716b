"""Square-root perturbation and wave propagation for self-adjoint operators.

Evolution uses the spectral form ``u(t) = cos(t w) f + sin(t w) / w g`` with
``w = L^{1/2}``, computed per eigenmode.  The constants (``w = 0``) take the
limit ``sin(t w) / w -> t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_grid_function, check_positive, check_same_grid
from .elliptic import CoefficientField, EllipticOperator, assemble, sesquilinear_form
from .exceptions import NotSelfAdjoint, ZeroGradient
from .grid import GridFunction, gradient_values, l2_norm

__all__ = [
    "WaveState",
    "SqrtPerturbation",
    "GapReport",
    "sqrt_perturbation_ratio",
    "evolve",
    "evolve_many",
    "integrated_position",
    "energy",
    "pde_residual",
    "wave_perturbation_gap",
    "sharpness_ratio",
]


@dataclass(frozen=True)
class WaveState:
    position: GridFunction
    velocity: GridFunction
    time: float


def _self_adjoint_factorization(L: EllipticOperator):
    if not L.is_self_adjoint:
        raise NotSelfAdjoint("wave evolution requires Hermitian coefficients")
    return L.factorization


def _frequencies(F) -> np.ndarray:
    return np.sqrt(np.clip(F.eigenvalues.real, 0.0, None))


def _sin_over(w: np.ndarray, t: float) -> np.ndarray:
    """``sin(t w) / w`` with the value ``t`` at ``w = 0``."""
    return t * np.sinc(w * t / np.pi)


def _one_minus_cos_over(w: np.ndarray, t: float) -> np.ndarray:
    """``(1 - cos(t w)) / w^2`` written as ``2 sin^2(t w / 2) / w^2``."""
    return 0.5 * t**2 * np.sinc(w * t / (2 * np.pi)) ** 2


def evolve_many(L: EllipticOperator, f, g, ts) -> tuple[np.ndarray, np.ndarray]:
    """Positions and velocities at each time, both ``(len(ts), size)``."""
    F = _self_adjoint_factorization(L)
    f = as_grid_function(f, L.grid)
    g = as_grid_function(g, L.grid)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    kf, cf = F.split(f.values)
    kg, cg = F.split(g.values)
    w = _frequencies(F)
    pos = np.empty((ts.size, L.grid.size), dtype=complex)
    vel = np.empty_like(pos)
    for i, t in enumerate(ts):
        cos = np.cos(w * t)
        pos[i] = F.merge(None if kf is None else kf + t * kg, cos * cf + _sin_over(w, t) * cg)
        vel[i] = F.merge(kg, -w**2 * _sin_over(w, t) * cf + cos * cg)
    return pos, vel


def evolve(L: EllipticOperator, f, g, t: float) -> WaveState:
    """Solve ``u'' + L u = 0`` with ``u(0) = f`` and ``u'(0) = g`` up to time ``t``."""
    if not t >= 0:
        raise ValueError("t must be nonnegative")
    pos, vel = evolve_many(L, f, g, [t])
    return WaveState(GridFunction(L.grid, pos[0]), GridFunction(L.grid, vel[0]), float(t))


def integrated_position(L: EllipticOperator, f, g, t: float) -> GridFunction:
    """``int_0^t u(s) ds`` in closed form per eigenmode."""
    F = _self_adjoint_factorization(L)
    f = as_grid_function(f, L.grid)
    g = as_grid_function(g, L.grid)
    kf, cf = F.split(f.values)
    kg, cg = F.split(g.values)
    w = _frequencies(F)
    body = _sin_over(w, t) * cf + _one_minus_cos_over(w, t) * cg
    kern = None if kf is None else t * kf + 0.5 * t**2 * kg
    return GridFunction(L.grid, F.merge(kern, body))


def energy(L: EllipticOperator, state: WaveState) -> float:
    """``Re Q(u, u) + ||u'||^2``."""
    return float(sesquilinear_form(L, state.position, state.position).real + l2_norm(state.velocity) ** 2)


def pde_residual(L: EllipticOperator, f, g, t: float, tau: float = 2.5e-4) -> float:
    """``||D_tau^2 u + L u|| / ||L u||`` at time ``t`` with the central second difference.

    The difference quotient carries a truncation error ``tau^2 w^4 / 12``
    per mode, so the ratio is small only for data whose spectrum satisfies
    ``tau w << 1``.
    """
    check_positive(tau, "tau")
    if t < tau:
        raise ValueError("need t >= tau for a central difference")
    pos, _ = evolve_many(L, f, g, [t - tau, t, t + tau])
    second = (pos[0] - 2 * pos[1] + pos[2]) / tau**2
    Lu = L.matrix @ pos[1]
    scale = np.linalg.norm(Lu)
    if scale == 0:
        return float(np.linalg.norm(second))
    return float(np.linalg.norm(second + Lu) / scale)


def _gradient_norm(f: GridFunction) -> float:
    return float(np.sqrt(np.sum(np.abs(gradient_values(f.grid, f.values)) ** 2) * f.grid.cell_volume))


@dataclass(frozen=True)
class SqrtPerturbation:
    ratio: float
    difference: float
    coefficient_gap: float
    gradient_norm: float
    identical: bool

    def __float__(self) -> float:
        return self.ratio


def sqrt_perturbation_ratio(A1: CoefficientField, A2: CoefficientField, f, kappa: float = 0.0) -> SqrtPerturbation:
    """``||L1^{1/2} f - L2^{1/2} f|| / (||A1 - A2||_inf ||grad f||)``.

    Identical fields give ratio 0 with ``identical=True``.
    """
    grid = check_same_grid(A1, A2)
    f = as_grid_function(f, grid)
    gn = _gradient_norm(f)
    if gn <= 1e-13 * max(l2_norm(f), 1e-300) / grid.side_length:
        raise ZeroGradient("f is constant")
    gap = (A1 - A2).sup_norm()
    if gap == 0.0:
        return SqrtPerturbation(0.0, 0.0, 0.0, gn, True)
    F1 = assemble(A1, kappa).factorization
    F2 = assemble(A2, kappa).factorization
    diff = l2_norm(GridFunction(grid, F1.power(0.5, f.values) - F2.power(0.5, f.values)))
    return SqrtPerturbation(diff / (gap * gn), diff, gap, gn, False)


@dataclass(frozen=True)
class GapReport:
    lhs: float
    rhs: float
    ratio: float
    displacement: float
    integrated_gradient: float


def _integrated_difference(L1, L2, f, g, t, method, nodes):
    if method == "closed":
        return integrated_position(L1, f, g, t).values - integrated_position(L2, f, g, t).values
    if method == "gauss":
        x, w = np.polynomial.legendre.leggauss(nodes)
        s = 0.5 * t * (x + 1)
        p1, _ = evolve_many(L1, f, g, s)
        p2, _ = evolve_many(L2, f, g, s)
        return 0.5 * t * np.tensordot(w, p1 - p2, axes=(0, 0))
    raise ValueError(f"unknown method {method!r}")


def wave_perturbation_gap(
    A1: CoefficientField,
    A2: CoefficientField,
    f,
    g,
    t: float,
    kappa: float = 0.0,
    method: str = "closed",
    nodes: int = 32,
) -> GapReport:
    """``lhs = ||u1(t) - u2(t)|| + ||int_0^t grad(u1 - u2) ds||`` against ``t ||A1 - A2|| (||grad f|| + ||g||)``.

    ``method="gauss"`` replaces the closed-form time integral by Gauss-Legendre
    quadrature on ``nodes`` points.
    """
    check_positive(t, "t")
    grid = check_same_grid(A1, A2)
    f = as_grid_function(f, grid)
    g = as_grid_function(g, grid)
    L1, L2 = assemble(A1, kappa), assemble(A2, kappa)
    for L in (L1, L2):
        if not L.is_self_adjoint:
            raise NotSelfAdjoint("the wave perturbation bound is posed for Hermitian coefficients")
    gap = (A1 - A2).sup_norm()
    rhs = t * gap * (_gradient_norm(f) + l2_norm(g))
    if gap == 0.0:
        return GapReport(0.0, rhs, 0.0, 0.0, 0.0)
    u1 = evolve(L1, f, g, t).position
    u2 = evolve(L2, f, g, t).position
    displacement = l2_norm(u1 - u2)
    integral = GridFunction(grid, _integrated_difference(L1, L2, f, g, t, method, nodes))
    ig = _gradient_norm(integral)
    lhs = displacement + ig
    return GapReport(lhs, rhs, lhs / rhs if rhs > 0 else np.inf, displacement, ig)


def sharpness_ratio(grid, b: float, t: float, f, g) -> float:
    """Gap ratio for ``L1 = -Laplacian`` against ``L2 = -(1 + b) Laplacian``."""
    check_positive(b, "b")
    A1 = CoefficientField.identity(grid)
    A2 = CoefficientField(grid, (1 + b) * np.eye(grid.dim))
    return wave_perturbation_gap(A1, A2, f, g, t).ratio
