"""Finite sections of the weighted-shift counterexample on ``l^2(Z)``.

``D e_j = 2^j e_j`` and ``B`` is the Laurent operator with coefficients
``b_n = i / (pi n)`` (``b_0 = 0``), whose symbol is the sawtooth
``theta / pi - 1`` on ``(0, 2 pi)``.  With ``L_z = D (I + zB) D`` and
``R_z = L_z^{1/2}``, the derivative ``R_0'`` solves a Sylvester equation
whose solution has entries ``2^j c_{i-j}``.  The symbol of ``c`` has a
logarithmic singularity at ``theta = 0``; the finite sections here make
that growth visible.  They illustrate the argument, they do not prove it.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from ._validation import check_positive
from .exceptions import FactorizationFailure, KatoLabError

__all__ = [
    "TruncatedPair",
    "PerturbedOperator",
    "b_coefficients",
    "bhat",
    "bhat_sup",
    "c_sequence",
    "chat",
    "chat_sup",
    "derivative_matrix",
    "sylvester_check",
    "finite_difference_derivative",
    "derivative_via_finite_difference",
    "BlowupRow",
    "norm_blowup_table",
    "log_slope",
]

THETA_POINTS = 2**16
# sqrtm of D^2-like matrices with cond 16^N stops being trustworthy past this
MAX_SQRT_HALF_WIDTH = 10


def _check_half_width(N) -> int:
    if int(N) != N or N < 1:
        raise ValueError(f"half width must be a positive integer, got {N!r}")
    return int(N)


def b_coefficients(n) -> np.ndarray:
    """``b_n = i / (pi n)`` with ``b_0 = 0``."""
    n = np.asarray(n)
    out = np.zeros(n.shape, dtype=complex)
    nz = n != 0
    out[nz] = 1j / (np.pi * n[nz])
    return out


def _c_from_b(n, b) -> np.ndarray:
    # 2^n / (1 + 2^n), clipped so large negative n underflows to 0 quietly
    n = np.clip(np.asarray(n, dtype=float), -1000, 1000)
    weight = 1.0 / (1.0 + np.exp2(-n))
    return b * weight


def c_sequence(N: int) -> np.ndarray:
    """``c_n = b_n 2^n / (1 + 2^n)`` for ``n = -N..N``."""
    N = _check_half_width(N)
    n = np.arange(-N, N + 1)
    return _c_from_b(n, b_coefficients(n))


def _symbol_values(coeffs: np.ndarray, N: int, points: int) -> np.ndarray:
    """``sum_{|n|<=N} coeffs_n e^{i n theta_k}`` on ``theta_k = 2 pi k / points``."""
    if 2 * N >= points:
        raise ValueError("theta grid too coarse for the requested half width")
    spread = np.zeros(points, dtype=complex)
    n = np.arange(-N, N + 1)
    spread[n % points] = coeffs
    return np.fft.ifft(spread) * points


def _theta_grid(points: int) -> np.ndarray:
    return 2 * np.pi * np.arange(points) / points


def _partial_sum(coeffs, N, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    n = np.arange(-N, N + 1)
    return np.exp(1j * np.multiply.outer(theta, n)) @ coeffs


def bhat(theta, N: int):
    """Partial Fourier sum ``sum_{0<|n|<=N} b_n e^{i n theta}`` (real-valued)."""
    N = _check_half_width(N)
    out = _partial_sum(b_coefficients(np.arange(-N, N + 1)), N, theta)
    return out if np.ndim(out) else complex(out)


def bhat_sup(N: int, points: int = THETA_POINTS, gibbs_window: bool = True) -> float:
    """``max |bhat|`` over a uniform theta grid.

    With ``gibbs_window`` the points within ``sqrt(2 pi / N)`` of ``theta = 0``
    are skipped.  The overshoot of the partial sums lives at ``theta ~ 1/N``
    and its size does not shrink with ``N``, so only a window that is wide
    compared with ``1/N`` (yet still shrinking) lets the sup converge to 1.
    """
    N = _check_half_width(N)
    values = _symbol_values(b_coefficients(np.arange(-N, N + 1)), N, points)
    theta = _theta_grid(points)
    keep = np.ones(points, dtype=bool)
    if gibbs_window:
        w = np.sqrt(2 * np.pi / N)
        keep = (theta > w) & (theta < 2 * np.pi - w)
    return float(np.max(np.abs(values[keep])))


def chat(theta, N: int):
    """Partial Fourier sum of the derivative symbol ``sum_{|n|<=N} c_n e^{i n theta}``."""
    out = _partial_sum(c_sequence(N), _check_half_width(N), theta)
    return out if np.ndim(out) else complex(out)


def chat_sup(N: int, points: int = THETA_POINTS) -> float:
    N = _check_half_width(N)
    return float(np.max(np.abs(_symbol_values(c_sequence(N), N, points))))


def log_slope(N_list, values) -> float:
    """Least-squares slope of ``values`` against ``ln N``."""
    slope, _ = np.polyfit(np.log(np.asarray(N_list, dtype=float)), np.asarray(values, dtype=float), 1)
    return float(slope)


def _toeplitz(coeffs_of_offset, N: int) -> np.ndarray:
    """Matrix ``M[i, j] = coeffs(i - j)`` on indices ``-N..N``."""
    offsets = np.arange(-2 * N, 2 * N + 1)
    vals = coeffs_of_offset(offsets)
    col = vals[2 * N:]  # offsets 0..2N
    row = vals[2 * N::-1]  # offsets 0..-2N
    return sla.toeplitz(col, row)


@dataclass(frozen=True)
class TruncatedPair:
    """``D`` and ``B`` restricted to ``span{e_j : |j| <= N}``."""

    half_width: int

    def __post_init__(self):
        _check_half_width(self.half_width)

    @property
    def size(self) -> int:
        return 2 * self.half_width + 1

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-self.half_width, self.half_width + 1)

    @property
    def d_diagonal(self) -> np.ndarray:
        return np.exp2(self.indices.astype(float))

    @cached_property
    def D(self) -> np.ndarray:
        return np.diag(self.d_diagonal)

    @cached_property
    def B(self) -> np.ndarray:
        return _toeplitz(b_coefficients, self.half_width)

    @property
    def condition_number(self) -> float:
        return 4.0**self.half_width

    @cached_property
    def B_norm(self) -> float:
        return float(np.linalg.norm(self.B, 2))

    def L(self, z: complex) -> np.ndarray:
        d = self.d_diagonal
        return d[:, None] * (np.eye(self.size) + z * self.B) * d[None, :]


class PerturbedOperator:
    """``L_z = D (I + zB) D`` and its principal square root on a finite section."""

    def __init__(self, pair: TruncatedPair, z: complex):
        z = complex(z)
        if abs(z) >= 1:
            raise ValueError(f"need |z| < 1, got {z}")
        if abs(z) * pair.B_norm >= 1:
            raise ValueError("I + zB is not safely invertible: |z| ||B|| >= 1")
        self.pair = pair
        self.z = z

    @cached_property
    def L(self) -> np.ndarray:
        return self.pair.L(self.z)

    def numerical_range_min(self) -> float:
        """Smallest eigenvalue of the Hermitian part of ``I + zB``.

        ``Re <L_z u, u> = Re <(I + zB) Du, Du>``, so positivity here is
        accretivity of ``L_z``.
        """
        A = np.eye(self.pair.size) + self.z * self.pair.B
        return float(np.linalg.eigvalsh(0.5 * (A + A.conj().T))[0])

    @cached_property
    def R(self) -> np.ndarray:
        if self.pair.half_width > MAX_SQRT_HALF_WIDTH:
            raise FactorizationFailure(
                f"half width {self.pair.half_width} > {MAX_SQRT_HALF_WIDTH}: cond(D)^2 = 16^N is beyond sqrtm accuracy"
            )
        if self.numerical_range_min() <= 0:
            raise FactorizationFailure("L_z is not accretive on this section")
        R = sla.sqrtm(self.L)
        residual = np.linalg.norm(R @ R - self.L) / np.linalg.norm(self.L)
        if not np.isfinite(residual) or residual > 1e-8:
            raise FactorizationFailure(f"square root residual {residual:.2e}")
        return R


def derivative_matrix(N: int, c: np.ndarray | None = None) -> np.ndarray:
    """``R_0'`` on the section: ``R[i, j] = 2^j c_{i-j}``.

    ``c`` may override the coefficients (indexed ``n = -2N..2N``); it exists
    for negative controls.
    """
    N = _check_half_width(N)
    if c is None:
        n = np.arange(-2 * N, 2 * N + 1)
        c = _c_from_b(n, b_coefficients(n))
    c = np.asarray(c, dtype=complex)
    if c.shape != (4 * N + 1,):
        raise ValueError(f"c must have length {4 * N + 1}")
    T = _toeplitz(lambda off: c[off + 2 * N], N)
    return T * np.exp2(np.arange(-N, N + 1, dtype=float))[None, :]


def sylvester_check(N: int, c: np.ndarray | None = None) -> float:
    """Relative residual of ``R D + D R = D B D`` with ``R`` from the closed form."""
    pair = TruncatedPair(N)
    R = derivative_matrix(N, c)
    d = pair.d_diagonal
    lhs = R * d[None, :] + d[:, None] * R
    rhs = d[:, None] * pair.B * d[None, :]
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs))


def finite_difference_derivative(N: int, h: float, direction: complex = 1.0) -> np.ndarray:
    """``(R_{h u} - R_{-h u}) / (2h)`` with ``u = direction``; approximates ``u R_0'``."""
    check_positive(h, "h")
    direction = complex(direction)
    if abs(abs(direction) - 1) > 1e-12:
        raise ValueError("direction must have modulus 1")
    pair = TruncatedPair(N)
    plus = PerturbedOperator(pair, h * direction).R
    minus = PerturbedOperator(pair, -h * direction).R
    return (plus - minus) / (2 * h)


def _central_band(N: int) -> slice:
    half = max(1, N // 2)
    return slice(N - half, N + half + 1)


def derivative_via_finite_difference(N: int, h: float = 1e-4, direction: complex = 1.0) -> float:
    """Relative Frobenius gap between the finite difference and ``direction * R_0'``.

    Measured on the central block ``|i|, |j| <= N // 2`` (at least ``1``),
    away from the truncation edges.
    """
    if h > 1e-3:
        raise ValueError("h must be at most 1e-3")
    fd = finite_difference_derivative(N, h, direction)
    exact = complex(direction) * derivative_matrix(N)
    band = _central_band(N)
    diff = fd[band, band] - exact[band, band]
    return float(np.linalg.norm(diff) / np.linalg.norm(exact[band, band]))


@dataclass(frozen=True)
class BlowupRow:
    N: int
    section_norm: float
    chat_sup: float
    chat_sup_double: float

    @property
    def section_gap(self) -> float:
        """``chat_sup(2N) - ||R_0' D^{-1}||``; nonnegative up to theta-grid error."""
        return self.chat_sup_double - self.section_norm


def _section_norm(N: int) -> float:
    # R_0' D^{-1} is the Toeplitz section of c, entries c_{i-j}
    n = np.arange(-2 * N, 2 * N + 1)
    c = _c_from_b(n, b_coefficients(n))
    T = _toeplitz(lambda off: c[off + 2 * N], N)
    return float(np.linalg.norm(T, 2))


def norm_blowup_table(N_list, points: int = THETA_POINTS) -> list[BlowupRow]:
    """``||R_0' D^{-1}||`` on growing sections next to the symbol sup."""
    rows = []
    for N in N_list:
        N = _check_half_width(N)
        rows.append(BlowupRow(N, _section_norm(N), chat_sup(N, points), chat_sup(2 * N, points)))
    return rows

