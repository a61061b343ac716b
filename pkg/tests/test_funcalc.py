import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from katolab.elliptic import CoefficientField, adjoint, assemble, sesquilinear_form
from katolab.exceptions import NegativePowerOnKernel, TGridTooNarrow, ZeroGradient
from katolab.funcalc import (
    TGrid,
    critical_exponent_scan,
    factorize,
    fractional_power_apply,
    kato_ratio,
    kato_ratios,
    mcintosh_yagi_norm,
    self_adjoint_defect,
    sqrt_apply,
)
from katolab.grid import Grid, GridFunction, inner, l2_norm
from katolab.recipes import diagonal_rough, hermitian_elliptic, random_elliptic

from conftest import band_limited


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_identity_spectrum():
    g = Grid(1, 16, 2.0)
    F = factorize(assemble(CoefficientField.identity(g)))
    ev = np.sort(np.concatenate([[0.0], F.eigenvalues.real]))
    assert np.allclose(ev, np.sort(g.wavenumber_squared), atol=1e-9)
    assert np.all(np.abs(F.eigenvalues.imag) < 1e-12)


@given(st.integers(0, 300))
def test_sector_for_random_complex(seed):
    F = factorize(assemble(random_elliptic(Grid(2, 8, 1.0), seed=seed)))
    assert F.max_abs_argument < np.pi / 2


def test_constant_function_of_operator_is_identity(grid2):
    F = factorize(assemble(random_elliptic(grid2, seed=1)))
    v = band_limited(grid2, 5).values
    out = F.apply(lambda z: np.ones_like(z), v)
    assert np.allclose(out, v, atol=1e-10)


def test_sqrt_single_mode():
    g = Grid(1, 32, 3.0)
    L = assemble(CoefficientField.identity(g))
    f = GridFunction.fourier_mode(g, (4,))
    out = sqrt_apply(L, f).values
    assert np.allclose(out, 2 * np.pi * 4 / 3.0 * f.values, atol=1e-10)
    assert np.allclose(sqrt_apply(L, GridFunction.constant(g)).values, 0, atol=1e-12)


@given(st.integers(0, 300), st.sampled_from([1, 2]))
def test_sqrt_squares_to_operator(seed, dim):
    g = Grid(dim, 16 if dim == 1 else 8, 1.0)
    L = assemble(random_elliptic(g, seed=seed))
    f = band_limited(g, seed, max_mode=3)
    twice = sqrt_apply(L, sqrt_apply(L, f)).values
    assert _rel(twice, L.matrix @ f.values) <= 1e-9
    # the root is accretive
    assert inner(sqrt_apply(L, f), f).real >= -1e-9 * l2_norm(f) ** 2


def test_sqrt_eigenvalues_right_half_plane(grid2):
    F = factorize(assemble(random_elliptic(grid2, seed=3)))
    w = np.diag(F.triangular_power(0.5))
    assert np.all(w.real > 0)


@given(st.integers(0, 200))
def test_semigroup(seed):
    g = Grid(2, 8, 1.0)
    L = assemble(random_elliptic(g, seed=seed))
    f = band_limited(g, seed, mean_zero=True)
    a = fractional_power_apply(L, 0.4, fractional_power_apply(L, 0.3, f))
    b = fractional_power_apply(L, 0.7, f)
    assert _rel(a.values, b.values) <= 1e-9
    c = fractional_power_apply(L, -0.5, fractional_power_apply(L, 0.5, f))
    assert _rel(c.values, f.values) <= 1e-9


def test_power_one_and_kernel(grid2):
    L = assemble(random_elliptic(grid2, seed=0))
    f = band_limited(grid2, 2)
    assert _rel(fractional_power_apply(L, 1.0, f).values, L.matrix @ f.values) <= 1e-10
    with pytest.raises(NegativePowerOnKernel):
        fractional_power_apply(L, -0.5, f)
    with pytest.raises(ValueError):
        fractional_power_apply(L, 1.5, f)
    # with kappa > 0 there is no kernel and negative powers are allowed
    Lk = assemble(random_elliptic(grid2, seed=0), kappa=1.0)
    u = fractional_power_apply(Lk, -1.0, f).values
    assert np.allclose(Lk.matrix @ u, f.values, atol=1e-9)


def test_adjoint_spectrum_is_conjugate(grid2):
    L = assemble(random_elliptic(grid2, seed=7))
    a = np.sort_complex(factorize(L).eigenvalues)
    b = np.sort_complex(np.conj(factorize(adjoint(L)).eigenvalues))
    assert np.allclose(a, b, atol=1e-9)


@pytest.mark.parametrize("mode", [1, 3, 7])
def test_mcintosh_yagi_single_mode(mode):
    g = Grid(1, 64, 1.0)
    L = assemble(CoefficientField.identity(g))
    tg = TGrid.spanning(L, decades=8, points=256)
    f = GridFunction.fourier_mode(g, (mode,))
    q = mcintosh_yagi_norm(L, f, tg) ** 2
    assert q / l2_norm(sqrt_apply(L, f)) ** 2 == pytest.approx(0.5, abs=1e-3)
    assert mcintosh_yagi_norm(L, GridFunction.constant(g), tg) == 0.0


def test_mcintosh_yagi_scalar_oracle():
    # int_0^inf s^2 / (1 + s^2)^2 ds / s, computed independently
    from scipy.integrate import quad

    val, _ = quad(lambda s: s / (1 + s**2) ** 2, 0, np.inf)
    assert val == pytest.approx(0.5, abs=1e-12)


def test_mcintosh_yagi_tgrid_check(grid1):
    L = assemble(CoefficientField.identity(grid1))
    with pytest.raises(TGridTooNarrow):
        mcintosh_yagi_norm(L, band_limited(grid1), TGrid(0.1, 0.2, 32))
    with pytest.raises(TGridTooNarrow):
        TGrid.spanning(L, decades=0.5)


def test_kato_identity():
    g = Grid(2, 16, 1.0)
    L = assemble(CoefficientField.identity(g))
    fs = np.stack([band_limited(g, s, max_mode=5).values for s in range(10)])
    assert np.allclose(kato_ratios(L, fs), 1.0, atol=1e-10)
    assert kato_ratio(L, GridFunction(g, fs[0])) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ZeroGradient):
        kato_ratio(L, GridFunction.constant(g))


@given(st.integers(0, 300))
def test_self_adjoint_identity(seed):
    g = Grid(2, 8, 1.0)
    A = hermitian_elliptic(g, seed=seed)
    L = assemble(A)
    f = band_limited(g, seed)
    assert self_adjoint_defect(L, f) <= 1e-9
    r2 = kato_ratio(L, f) ** 2
    assert A.bounds.lower * (1 - 1e-9) <= r2 <= A.bounds.upper * (1 + 1e-9)
    q = sesquilinear_form(L, f, f).real
    assert l2_norm(sqrt_apply(L, f)) ** 2 == pytest.approx(q, rel=1e-9)


def test_kato_ratios_batch_matches_single(grid2):
    L = assemble(random_elliptic(grid2, seed=5))
    fs = np.stack([band_limited(grid2, s).values for s in range(4)])
    single = [kato_ratio(L, GridFunction(grid2, f)) for f in fs]
    assert np.allclose(kato_ratios(L, fs), single, rtol=1e-12)


def test_critical_scan_constant_coefficient():
    g = Grid(1, 32, 1.0)
    rows = critical_exponent_scan(GridFunction.constant(g), [0.0, 0.25, 0.5, 0.75, 1.0])
    # sup over xi of |xi|^{2a} / (1 + xi^2)^a approaches 1 from below
    for alpha, r in rows:
        kmax = np.max(g.wavenumber_squared)
        assert r == pytest.approx((kmax / (1 + kmax)) ** alpha, rel=1e-9)
        assert r <= 1 + 1e-12


def test_critical_scan_rough_trend():
    low, high = [], []
    for n in (32, 128):
        g = Grid(1, n, 1.0)
        a = GridFunction(g, diagonal_rough(g, 1.0, 4.0, seed=0, pieces=8).values[:, 0, 0].real)
        rows = dict(critical_exponent_scan(a, [0.4, 0.9]))
        low.append(rows[0.4])
        high.append(rows[0.9])
    # alpha above 1/2 keeps growing with refinement, below it settles
    assert high[1] / high[0] > 1.3
    assert abs(low[1] / low[0] - 1) < 1e-2


def test_critical_scan_rejects_bad_input(grid2):
    with pytest.raises(ValueError):
        critical_exponent_scan(GridFunction.constant(grid2), [0.5])
    g = Grid(1, 16, 1.0)
    with pytest.raises(ValueError):
        critical_exponent_scan(GridFunction.constant(g, 0.5), [0.5])
