"""Square functions: theta_t, the mollifier P_t, Littlewood-Paley families, T(1) residuals.

Families are rules ``(t, values) -> values`` on flat grid arrays, batched
over trailing axes.  Vector-valued inputs have shape ``(dim, size, ...)``.
Integrals against ``dt/t`` use a :class:`~katolab.funcalc.TGrid` or, where
dyadic averages enter, the octave Gauss-Legendre rule of
:func:`~katolab.dyadic.layer_quadrature`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.special as sps

from ._validation import as_grid_function, as_vector_field, check_positive
from .dyadic import CarlesonMeasure, _s_t_values, layer_quadrature
from .elliptic import EllipticOperator
from .exceptions import KatoLabError, TGridTooNarrow
from .funcalc import TGrid
from .grid import (
    Grid,
    GridFunction,
    VectorField,
    divergence_values,
    gradient_values,
)

__all__ = [
    "KernelFamily",
    "SFEReport",
    "AOScan",
    "PSI",
    "theta_apply",
    "theta_one",
    "theta_one_many",
    "theta_gradient_many",
    "mollifier_apply",
    "mollifier_hat",
    "mollifier_square_function",
    "lp_family",
    "mollifier_family",
    "dyadic_family",
    "theta_family",
    "theta_mollified_family",
    "zero_family",
    "constant_kernel_family",
    "lp_family_check",
    "almost_orthogonality_scan",
    "sfe_estimate",
    "reduction_identity_residual",
    "reduction_bound",
    "t1_residual",
    "theta_one_measure",
    "kernel_condition_check",
]

PSI = {
    # both satisfy int_0^inf psi(s)^2 ds/s = 1
    "gaussian": lambda s: 2 * np.sqrt(2) * s**2 * np.exp(-(s**2)),
    "exponential": lambda s: 2 * s * np.exp(-s),
}

# int_0^a psi^2 ds/s and int_b^inf psi^2 ds/s are below 1e-4 for these (a, b)
_PSI_SUPPORT = {"gaussian": (0.08, 2.6), "exponential": (0.007, 6.5)}


# --- mollifier ------------------------------------------------------------

def _bump(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1
    out[inside] = np.exp(1 - 1 / (1 - r[inside] ** 2))
    return out


@lru_cache(maxsize=4)
def _radial_rule(dim: int, nodes: int = 400):
    x, w = np.polynomial.legendre.leggauss(nodes)
    r = 0.5 * (x + 1)
    w = 0.5 * w * _bump(r)
    sphere = 2.0 if dim == 1 else 2 * np.pi
    mass = sphere * np.sum(w * r ** (dim - 1))
    return r, w / mass


def mollifier_hat(dim: int, s) -> np.ndarray:
    """Continuum Fourier transform ``p_hat(s)`` of the normalized radial bump, ``p_hat(0) = 1``."""
    r, w = _radial_rule(dim)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if dim == 1:
        vals = 2 * np.cos(np.outer(s, r)) @ w
    else:
        vals = 2 * np.pi * sps.j0(np.outer(s, r)) @ (w * r)
    return np.where(s > 400, 0.0, vals)


@lru_cache(maxsize=512)
def _mollifier_multiplier(grid: Grid, t: float) -> np.ndarray:
    """Symbol of ``P_t``.  Sampled kernel for ``t <= side/2``, continuum symbol beyond."""
    if t <= grid.side_length / 2:
        r = np.sqrt(np.sum(grid.torus_offsets(0) ** 2, axis=0)) / t
        kernel = _bump(r)
        kernel /= kernel.sum()
        m = np.fft.fftn(kernel.reshape(grid.shape)).real.ravel()
    else:
        k = np.sqrt(grid.wavenumber_squared)
        m = mollifier_hat(grid.dim, t * k)
        m[0] = 1.0
    m.setflags(write=False)
    return m


def mollifier_apply(t: float, f) -> GridFunction:
    """``P_t f``: convolution with ``t^{-n} p(x/t)``, ``p`` a smooth bump on the unit ball.

    The sampled kernel sums to one, so ``P_t 1 = 1`` exactly.
    """
    t = check_positive(t, "t")
    grid = f.grid
    if t > grid.side_length / 2:
        raise ValueError(f"t={t} exceeds half the torus side ({grid.side_length / 2})")
    return GridFunction(grid, grid.multiplier_apply(_mollifier_multiplier(grid, t), f.values))


def mollifier_square_function(f, tg: TGrid) -> float:
    """Quadrature of ``int ||(I - P_t^2) f / t||^2 dt/t``."""
    grid = f.grid
    coeffs = grid.fft(f.values)
    total = np.empty(tg.points)
    for i, t in enumerate(tg.t):
        m = _mollifier_multiplier(grid, float(t))
        total[i] = np.sum(np.abs((1 - m**2) * coeffs) ** 2) * grid.cell_volume / t**2
    return float(tg.integrate(total))


# --- theta_t --------------------------------------------------------------

def _div_a(L: EllipticOperator, components: np.ndarray) -> np.ndarray:
    return divergence_values(L.grid, L.coefficients.apply(components))


def theta_apply(L: EllipticOperator, t: float, F) -> GridFunction:
    """``(I + t^2 L)^{-1} t div(A F)`` by a direct resolvent solve.

    With ``L = -div A grad`` this gives ``theta_t grad f = -(I + t^2 L)^{-1} t L f``.
    """
    t = check_positive(t, "t")
    F = as_vector_field(F, L.grid)
    return GridFunction(L.grid, L.resolvent_solve(t, t * _div_a(L, F.components)))


def theta_one(L: EllipticOperator, t: float) -> VectorField:
    """``gamma_t = theta_t 1``: the field whose ``j``-th entry is ``theta_t e_j``."""
    grid = L.grid
    comps = [theta_apply(L, t, VectorField.constant(grid, np.eye(grid.dim)[j])).values for j in range(grid.dim)]
    return VectorField(grid, np.stack(comps))


def _theta_rhs(L: EllipticOperator) -> np.ndarray:
    grid = L.grid
    eye = np.broadcast_to(np.eye(grid.dim)[:, None, :], (grid.dim, grid.size, grid.dim))
    return _div_a(L, np.ascontiguousarray(eye))  # (size, dim)


def theta_one_many(L: EllipticOperator, ts) -> np.ndarray:
    """``theta_t 1`` for every ``t``, shape ``(T, dim, size)``, via the Schur factorization."""
    F = L.factorization
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    _, c = F.split(_theta_rhs(L))
    coords = F.resolvent_coords(c, ts)
    out = np.stack([F.merge(np.zeros(L.grid.dim), coords[i]) for i in range(ts.size)])
    return np.swapaxes(out, 1, 2) * ts[:, None, None]


def theta_gradient_many(L: EllipticOperator, ts, fs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``theta_t grad f`` for flat ``fs`` of shape ``(size, K)`` and ``theta_t 1`` together.

    Returns ``(theta_grad, gamma)`` of shapes ``(T, size, K)`` and ``(T, dim, size)``.
    """
    F = L.factorization
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    k = fs.shape[1]
    _, cf = F.split(fs)
    _, cd = F.split(_theta_rhs(L))
    rhs = np.concatenate([F.T @ cf, cd], axis=1)
    coords = F.resolvent_coords(rhs, ts)
    kern = np.zeros(rhs.shape[1])
    phys = np.stack([F.merge(kern, coords[i]) for i in range(ts.size)]) * ts[:, None, None]
    return -phys[:, :, :k], np.swapaxes(phys[:, :, k:], 1, 2)


def theta_one_measure(L: EllipticOperator, nodes: int = 4) -> CarlesonMeasure:
    """Atoms of ``|theta_t 1(x)|^2 dx dt/t`` on the Whitney layers."""
    return CarlesonMeasure.from_function(
        L.grid, lambda ts: np.sum(np.abs(theta_one_many(L, ts)) ** 2, axis=1), nodes=nodes
    )


# --- kernel families ------------------------------------------------------

@dataclass
class KernelFamily:
    """A family ``U_t`` given as a batched rule on flat values.

    ``multiplier(t)`` is set for translation-invariant families (symbol in
    FFT order); ``many(ts, values)`` optionally evaluates all ``t`` at once.
    """

    name: str
    grid: Grid
    rule: Callable[[float, np.ndarray], np.ndarray]
    vector_input: bool = False
    annihilates_constants: bool = False
    uniformly_bounded: bool = True
    adjoint: Callable[[float, np.ndarray], np.ndarray] | None = None
    multiplier: Callable[[float], np.ndarray] | None = None
    many: Callable | None = None
    extractable: bool = True
    metadata: dict = field(default_factory=dict)

    def __call__(self, t: float, u) -> GridFunction:
        if self.vector_input:
            u = as_vector_field(u, self.grid).components
        else:
            u = as_grid_function(u, self.grid).values
        return GridFunction(self.grid, self.rule(float(t), u))

    def apply_many(self, ts, values: np.ndarray) -> np.ndarray:
        if self.many is not None:
            return self.many(ts, values)
        return np.stack([self.rule(float(t), values) for t in ts])

    def matrix(self, t: float) -> np.ndarray:
        """Columns ``U_t e_y`` (vector input: ``y`` runs fastest inside each component)."""
        if not self.extractable:
            raise KatoLabError(f"family {self.name!r} has no extractable kernel")
        m = self.grid.size
        eye = np.eye(m, dtype=complex)
        if not self.vector_input:
            return self.rule(float(t), eye)
        cols = []
        for j in range(self.grid.dim):
            comp = np.zeros((self.grid.dim, m, m), dtype=complex)
            comp[j] = eye
            cols.append(self.rule(float(t), comp))
        return np.concatenate(cols, axis=1)

    def operator_norm(self, t: float) -> float:
        if self.multiplier is not None:
            return float(np.max(np.abs(self.multiplier(t))))
        return float(np.linalg.norm(self.matrix(t), 2))

    def uniform_bound(self, ts) -> float:
        """``C_U = max_t ||U_t||`` over the sampled ``t``."""
        return max(self.operator_norm(float(t)) for t in ts)


def _multiplier_family(name: str, grid: Grid, symbol: Callable[[float], np.ndarray], **kw) -> KernelFamily:
    def rule(t, values):
        return grid.multiplier_apply(symbol(t), values)

    def adjoint(t, values):
        return grid.multiplier_apply(np.conj(symbol(t)), values)

    return KernelFamily(name, grid, rule, adjoint=adjoint, multiplier=symbol, **kw)


def lp_family(grid: Grid, psi: str = "gaussian") -> KernelFamily:
    """``Delta_t = psi(t |D|)`` with Calderon normalization ``int psi^2 ds/s = 1``."""
    fn = PSI[psi]
    k = np.sqrt(grid.wavenumber_squared)
    return _multiplier_family(
        f"lp-{psi}", grid, lambda t: fn(t * k), annihilates_constants=True, metadata={"psi": psi}
    )


def mollifier_family(grid: Grid) -> KernelFamily:
    return _multiplier_family("mollifier", grid, lambda t: _mollifier_multiplier(grid, float(t)))


def dyadic_family(grid: Grid) -> KernelFamily:
    rule = lambda t, v: _s_t_values(grid, v, t, extend=True)  # noqa: E731
    return KernelFamily("dyadic", grid, rule, adjoint=rule)


def zero_family(grid: Grid, vector_input: bool = False) -> KernelFamily:
    def rule(t, v):
        return np.zeros(v.shape[1:] if vector_input else v.shape, dtype=complex)

    return KernelFamily("zero", grid, rule, vector_input=vector_input, annihilates_constants=True, adjoint=rule)


def constant_kernel_family(grid: Grid) -> KernelFamily:
    """``U_t f = mean(f)``: kernel ``1/|torus|`` with no decay in ``|x - y| / t``."""
    def rule(t, v):
        return np.broadcast_to(v.mean(axis=0, keepdims=True), v.shape).astype(complex)

    return KernelFamily("constant-kernel", grid, rule, adjoint=rule)


def theta_family(L: EllipticOperator) -> KernelFamily:
    grid = L.grid

    def rule(t, comps):
        return L.resolvent_solve(t, t * _div_a(L, comps))

    def many(ts, comps):
        F = L.factorization
        k, c = F.split(_div_a(L, comps))
        kern = None if k is None else np.zeros_like(k)
        coords = F.resolvent_coords(c, ts)
        return np.stack([F.merge(kern, coords[i]) * t for i, t in enumerate(ts)])

    return KernelFamily("theta", grid, rule, vector_input=True, annihilates_constants=False, many=many)


def theta_mollified_family(L: EllipticOperator) -> KernelFamily:
    """``U_t = theta_t P_t`` acting on vector fields (``P_t`` componentwise)."""
    grid = L.grid

    def smooth(t, comps):
        m = _mollifier_multiplier(grid, float(t))
        return np.stack([grid.multiplier_apply(m, c) for c in comps])

    def rule(t, comps):
        return L.resolvent_solve(t, t * _div_a(L, smooth(t, comps)))

    return KernelFamily("theta-mollified", grid, rule, vector_input=True)


# --- reports --------------------------------------------------------------

@dataclass
class SFEReport:
    """``square_function_value = int ||U_t u||^2 dt/t``, ``input_norm = ||u||^2``."""

    square_function_value: float
    input_norm: float
    ratio: float
    t_grid: TGrid
    tail_estimate: float = float("nan")


def _tail_estimate(ts: np.ndarray, g: np.ndarray) -> float:
    """Mass outside the grid, extrapolating power laws from the two end nodes."""
    tail = 0.0
    for (i, j), sign in (((0, 1), 1.0), ((-1, -2), -1.0)):
        if g[i] <= 0:
            continue
        if g[j] <= 0:
            return float("inf")
        slope = np.log(g[j] / g[i]) / np.log(ts[j] / ts[i])
        if sign * slope <= 0:
            return float("inf")
        tail += g[i] / abs(slope)
    return float(tail)


def sfe_estimate(U: KernelFamily, u, tg: TGrid) -> SFEReport:
    """Quadrature of ``int_0^inf ||U_t u||^2 dt/t`` against ``||u||^2``."""
    grid = U.grid
    if U.vector_input:
        values = as_vector_field(u, grid).components
    else:
        values = as_grid_function(u, grid).values
    out = U.apply_many(tg.t, values)
    g = np.sum(np.abs(out.reshape(tg.points, -1)) ** 2, axis=1) * grid.cell_volume
    value = float(tg.integrate(g))
    norm = float(np.sum(np.abs(values) ** 2) * grid.cell_volume)
    ratio = value / norm if norm > 0 else 0.0
    return SFEReport(value, norm, ratio, tg, _tail_estimate(tg.t, g))


def _check_lp_grid(grid: Grid, coeffs: np.ndarray, tg: TGrid, psi: str):
    k = np.sqrt(grid.wavenumber_squared)
    active = (np.abs(coeffs) > 1e-12 * max(np.max(np.abs(coeffs)), 1e-300)) & (k > 0)
    if not active.any():
        return
    a, b = _PSI_SUPPORT[psi]
    if tg.t_min > a / k[active].max() or tg.t_max < b / k[active].min():
        raise TGridTooNarrow(
            f"TGrid [{tg.t_min:.3g}, {tg.t_max:.3g}] must cover [{a / k[active].max():.3g}, {b / k[active].min():.3g}]"
        )


def lp_family_check(tg: TGrid, f, psi: str = "gaussian", return_kernel: bool = False):
    """Relative error of the Calderon reproduction ``f = int Delta_s^2 f ds/s``.

    Constants are annihilated by every ``Delta_s``; the error is measured on
    the mean-zero part and, with ``return_kernel``, the constant component
    is returned alongside it.
    """
    grid = f.grid
    coeffs = grid.fft(f.values)
    _check_lp_grid(grid, coeffs, tg, psi)
    k = np.sqrt(grid.wavenumber_squared)
    symbol = tg.integrate(PSI[psi](np.outer(tg.t, k)) ** 2)
    kernel = complex(coeffs[0]) / np.sqrt(grid.size) if grid.size else 0.0
    coeffs = coeffs.copy()
    coeffs[k == 0] = 0.0
    denom = np.linalg.norm(coeffs)
    err = 0.0 if denom == 0 else float(np.linalg.norm((symbol - 1) * coeffs) / denom)
    return (err, kernel) if return_kernel else err


@dataclass
class AOScan:
    t: np.ndarray
    s: np.ndarray
    opnorm: np.ndarray
    alpha: float
    alpha_small_t: float
    alpha_large_t: float
    r2: float

    def table(self) -> list[tuple[float, float, float]]:
        return [(float(t), float(s), float(self.opnorm[i, j])) for i, t in enumerate(self.t) for j, s in enumerate(self.s)]


def _fit_exponent(r: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    keep = (r < 1) & (y > 1e-300)
    if keep.sum() < 2:
        return float("nan"), float("nan")
    x, z = np.log(r[keep]), np.log(y[keep])
    A = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(A, z, rcond=None)
    resid = z - A @ coef
    ss = np.sum((z - z.mean()) ** 2)
    r2 = 1 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return float(coef[1]), float(r2)


def _power_norm(apply, adjoint, m: int, rng: np.random.Generator, iters: int = 20, restarts: int = 5) -> float:
    best = 0.0
    for _ in range(restarts):
        x = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        x /= np.linalg.norm(x)
        est = 0.0
        for _ in range(iters):
            y = adjoint(apply(x))
            ny = np.linalg.norm(y)
            if ny == 0:
                break
            est = np.sqrt(ny)
            x = y / ny
        best = max(best, est)
    return float(best)


def almost_orthogonality_scan(
    V: KernelFamily, tg: TGrid, sg: TGrid, psi: str = "gaussian", method: str = "auto", seed: int = 0
) -> AOScan:
    """``||V_t Delta_s||`` over the ``(t, s)`` grid and the fitted decay exponent.

    Multiplier families are exact (symbol products); otherwise the norm is an
    SVD of the assembled block for ``size <= 1024`` or power iteration
    (20 steps, 5 random restarts) on ``B^H B``.
    """
    grid = V.grid
    if V.vector_input:
        raise ValueError("almost_orthogonality_scan needs a scalar-input family")
    delta = lp_family(grid, psi)
    rng = np.random.default_rng(seed)
    norms = np.empty((tg.points, sg.points))
    if method == "auto":
        method = "symbol" if V.multiplier is not None else ("svd" if grid.size <= 1024 else "power")
    for i, t in enumerate(tg.t):
        if method == "svd":
            Vm = V.matrix(float(t))
        for j, s in enumerate(sg.t):
            ds = delta.multiplier(float(s))
            if method == "symbol":
                norms[i, j] = np.max(np.abs(V.multiplier(float(t)) * ds))
            elif method == "svd":
                block = Vm @ grid.ifft(ds[:, None] * grid.fft(np.eye(grid.size)))
                norms[i, j] = np.linalg.norm(block, 2)
            elif method == "power":
                if V.adjoint is None:
                    raise KatoLabError(f"power iteration needs the adjoint of {V.name!r}")
                fwd = lambda x, t=float(t), ds=ds: V.rule(t, grid.multiplier_apply(ds, x))  # noqa: E731
                bwd = lambda y, t=float(t), ds=ds: grid.multiplier_apply(np.conj(ds), V.adjoint(t, y))  # noqa: E731
                norms[i, j] = _power_norm(fwd, bwd, grid.size, rng)
            else:
                raise ValueError(f"unknown method {method!r}")
    T, S = np.meshgrid(tg.t, sg.t, indexing="ij")
    r = np.minimum(T / S, S / T)
    alpha, r2 = _fit_exponent(r.ravel(), norms.ravel())
    small, _ = _fit_exponent(r[T < S], norms[T < S])
    large, _ = _fit_exponent(r[T > S], norms[T > S])
    return AOScan(tg.t, sg.t, norms, alpha, small, large, r2)


# --- reduction to a Carleson measure --------------------------------------

def reduction_identity_residual(L: EllipticOperator, f, t: float) -> float:
    """Relative gap in ``(theta_t - theta_t P_t^2) grad f = -(I - R_t)(I - P_t^2) f / t``, ``R_t = (I + t^2 L)^{-1}``."""
    grid = L.grid
    f = as_grid_function(f, grid)
    m = _mollifier_multiplier(grid, float(t))
    grad = gradient_values(grid, f.values)
    smoothed = np.stack([grid.multiplier_apply(m**2, g) for g in grad])
    lhs = theta_apply(L, t, VectorField(grid, grad - smoothed)).values
    g = grid.multiplier_apply(1 - m**2, f.values)
    rhs = -(g - L.resolvent_solve(t, g)) / t
    scale = max(np.linalg.norm(lhs), np.linalg.norm(rhs), 1e-300)
    return float(np.linalg.norm(lhs - rhs) / scale)


def reduction_bound(L: EllipticOperator, f, tg: TGrid, resolvent_norms: bool = False) -> dict:
    """Both sides of ``int ||(theta_t - theta_t P_t^2) grad f||^2 <= 4 int ||(I - P_t^2) f / t||^2``.

    ``resolvent_norms`` adds ``max_t ||(I + t^2 L)^{-1}||`` (dense SVD per node).
    """
    grid = L.grid
    f = as_grid_function(f, grid)
    F = L.factorization
    lhs = np.empty(tg.points)
    for i, t in enumerate(tg.t):
        m = _mollifier_multiplier(grid, float(t))
        g = grid.multiplier_apply(1 - m**2, f.values)
        resolved = F.resolvent_many(g, [t])[0]
        lhs[i] = np.sum(np.abs(g - resolved) ** 2) * grid.cell_volume / t**2
    out = {"lhs": float(tg.integrate(lhs)), "rhs": mollifier_square_function(f, tg)}
    if resolvent_norms:
        eye = np.eye(grid.size)
        out["resolvent_norm"] = max(
            float(np.linalg.norm(L.resolvent_solve(float(t), eye), 2)) for t in tg.t
        )
    return out


def _averaged(grid: Grid, values: np.ndarray, t: float, averaging: str) -> np.ndarray:
    if averaging == "dyadic":
        return _s_t_values(grid, values, t, extend=True)
    if averaging == "mollifier":
        return grid.multiplier_apply(_mollifier_multiplier(grid, float(t)), values)
    raise ValueError(f"unknown averaging {averaging!r}")


def t1_residual(L: EllipticOperator, f, tg: TGrid, averaging: str = "dyadic", nodes: int = 4):
    """``int int |theta_t grad f - (theta_t 1) . (A_t grad f)|^2 dx dt/t / ||grad f||^2``.

    ``A_t`` is ``S_t`` (``averaging="dyadic"``) or ``P_t``.  ``f`` may be a
    single function or a ``(K, size)`` array of sample rows, in which case an
    array of ``K`` ratios is returned.  The ``t`` integral runs over the
    octaves covering ``tg``, with Gauss-Legendre nodes inside each octave so
    the jumps of ``S_t`` at the layer boundaries are respected.
    """
    grid = L.grid
    single = isinstance(f, GridFunction)
    fs = f.values[:, None] if single else np.asarray(f, dtype=complex).T
    ts, ws = layer_quadrature(grid, tg.t_min, tg.t_max, nodes)
    grads = gradient_values(grid, fs)  # (dim, size, K)
    norms = np.sum(np.abs(grads) ** 2, axis=(0, 1)) * grid.cell_volume
    th, gamma = theta_gradient_many(L, ts, fs)
    total = np.zeros(fs.shape[1])
    for i, t in enumerate(ts):
        avg = np.stack([_averaged(grid, g, t, averaging) for g in grads])
        resid = th[i] - np.einsum("jx,jxk->xk", gamma[i], avg)
        total += ws[i] * np.sum(np.abs(resid) ** 2, axis=0) * grid.cell_volume
    ratios = total / norms
    return float(ratios[0]) if single else ratios


# --- kernel conditions ----------------------------------------------------

def kernel_condition_check(U: KernelFamily, t: float, m_exp: float, columns=None) -> float:
    """``max_y t^n sum_x (1 + |x - y|/t)^{2m} |U_t(x, y)|^2 dx`` from the extracted kernel."""
    grid = U.grid
    t = check_positive(t, "t")
    if not m_exp > grid.dim:
        raise ValueError("m_exp must exceed the dimension")
    mat = U.matrix(t) / grid.cell_volume
    din = grid.dim if U.vector_input else 1
    kern = mat.reshape(grid.size, din, grid.size)
    ys = range(grid.size) if columns is None else columns
    best = 0.0
    for y in ys:
        d = np.sqrt(np.sum(grid.torus_offsets(int(y)) ** 2, axis=0))
        weight = (1 + d / t) ** (2 * m_exp)
        val = t**grid.dim * np.sum(weight * np.sum(np.abs(kern[:, :, y]) ** 2, axis=1)) * grid.cell_volume
        best = max(best, float(val))
    return best
