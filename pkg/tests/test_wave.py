import numpy as np
import pytest
from hypothesis import given, strategies as st

from katolab.elliptic import CoefficientField, assemble
from katolab.exceptions import NotSelfAdjoint, ZeroGradient
from katolab.grid import Grid, GridFunction
from katolab.recipes import hermitian_elliptic, random_elliptic
from katolab.wave import (
    energy,
    evolve,
    integrated_position,
    pde_residual,
    sharpness_ratio,
    sqrt_perturbation_ratio,
    wave_perturbation_gap,
)

from conftest import band_limited


@pytest.fixture
def circle():
    return Grid(1, 32, 2 * np.pi)


def test_eigenfunction_oscillates(circle):
    L = assemble(CoefficientField.identity(circle))
    f = GridFunction.fourier_mode(circle, (2,))
    for t in (0.3, 1.7, 5.0):
        u = evolve(L, f, GridFunction.constant(circle, 0), t).position
        assert np.allclose(u.values, np.cos(2 * t) * f.values, atol=1e-12)


def test_constant_velocity_drifts(circle):
    L = assemble(CoefficientField.identity(circle))
    g = GridFunction.constant(circle, 1.5)
    s = evolve(L, GridFunction.constant(circle, 0), g, 0.7)
    assert np.allclose(s.position.values, 1.05)
    assert np.allclose(s.velocity.values, 1.5)


@given(st.integers(0, 50), st.floats(0.1, 10.0))
def test_energy_conserved(seed, t):
    grid = Grid(1, 32, 2 * np.pi)
    L = assemble(hermitian_elliptic(grid, 0.5, 2.0, seed=seed))
    f, g = band_limited(grid, seed), band_limited(grid, seed + 1)
    e0 = energy(L, evolve(L, f, g, 0.0))
    assert energy(L, evolve(L, f, g, t)) == pytest.approx(e0, rel=1e-10)


def test_pde_residual(circle):
    L = assemble(hermitian_elliptic(circle, 0.5, 2.0, seed=1))
    f, g = band_limited(circle, 0, max_mode=4), band_limited(circle, 1, max_mode=4)
    assert pde_residual(L, f, g, 1.0) <= 1e-5
    # second-order difference: halving tau divides the residual by four
    r1, r2 = pde_residual(L, f, g, 1.0, 2e-3), pde_residual(L, f, g, 1.0, 1e-3)
    assert r1 / r2 == pytest.approx(4, rel=0.05)


def test_integrated_position_derivative(circle):
    L = assemble(hermitian_elliptic(circle, 0.5, 2.0, seed=3))
    f, g = band_limited(circle, 2), band_limited(circle, 3)
    h = 1e-4
    dI = (integrated_position(L, f, g, 1.0 + h).values - integrated_position(L, f, g, 1.0 - h).values) / (2 * h)
    assert np.allclose(dI, evolve(L, f, g, 1.0).position.values, atol=1e-6)


def test_sqrt_ratio_identical_is_zero(circle):
    A = hermitian_elliptic(circle, seed=4)
    r = sqrt_perturbation_ratio(A, A, band_limited(circle, 0))
    assert r.identical and r.ratio == 0


def test_sqrt_ratio_scalar_limit(circle):
    A1 = CoefficientField.identity(circle)
    f = GridFunction.fourier_mode(circle, (3,))
    for b in (1e-1, 1e-2, 1e-3):
        A2 = CoefficientField(circle, (1 + b) * np.eye(1))
        expected = (np.sqrt(1 + b) - 1) / b
        assert float(sqrt_perturbation_ratio(A1, A2, f)) == pytest.approx(expected, rel=1e-10)
    assert abs(expected - 0.5) < 1e-3


@given(st.integers(0, 30))
def test_sqrt_ratio_bounded_on_self_adjoint_pairs(seed):
    grid = Grid(1, 32, 1.0)
    A1 = hermitian_elliptic(grid, 0.5, 2.0, seed=seed)
    A2 = hermitian_elliptic(grid, 0.5, 2.0, seed=seed + 100)
    assert sqrt_perturbation_ratio(A1, A2, band_limited(grid, seed)).ratio < 5


def test_sqrt_ratio_constant_rejected(circle):
    A = CoefficientField.identity(circle)
    with pytest.raises(ZeroGradient):
        sqrt_perturbation_ratio(A, A, GridFunction.constant(circle, 2.0))


def test_gap_zero_for_identical_fields(circle):
    A = hermitian_elliptic(circle, seed=5)
    r = wave_perturbation_gap(A, A, band_limited(circle, 0), band_limited(circle, 1), 1.0)
    assert r.lhs == 0 and r.ratio == 0


def test_gap_single_mode_closed_form(circle):
    k, t, b = 2, 1.3, 0.01
    f = GridFunction.fourier_mode(circle, (k,))
    zero = GridFunction.constant(circle, 0)
    A1 = CoefficientField.identity(circle)
    A2 = CoefficientField(circle, (1 + b) * np.eye(1))
    r = wave_perturbation_gap(A1, A2, f, zero, t)
    w1, w2 = k, np.sqrt(1 + b) * k
    expected = (abs(np.cos(w1 * t) - np.cos(w2 * t)) + k * abs(np.sin(w1 * t) / w1 - np.sin(w2 * t) / w2)) / (t * b * k)
    assert r.ratio == pytest.approx(expected, rel=1e-9)


def test_sharpness_stabilizes(circle):
    f, g = band_limited(circle, 0, max_mode=4), band_limited(circle, 1, max_mode=4)
    ratios = [sharpness_ratio(circle, b, 1.0, f, g) for b in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert min(ratios) > 0.1
    # the ratio converges linearly in b
    steps = np.abs(np.diff(ratios))
    assert np.all(steps[1:] < 0.2 * steps[:-1])


def test_closed_form_matches_gauss(circle):
    A1 = hermitian_elliptic(circle, seed=1)
    A2 = hermitian_elliptic(circle, seed=2)
    f, g = band_limited(circle, 0, max_mode=4), band_limited(circle, 1, max_mode=4)
    closed = wave_perturbation_gap(A1, A2, f, g, 1.0)
    gauss = wave_perturbation_gap(A1, A2, f, g, 1.0, method="gauss")
    doubled = wave_perturbation_gap(A1, A2, f, g, 1.0, method="gauss", nodes=64)
    assert gauss.lhs == pytest.approx(closed.lhs, rel=1e-10)
    assert doubled.lhs == pytest.approx(gauss.lhs, rel=1e-10)


def test_non_self_adjoint_rejected(circle):
    A = random_elliptic(Grid(2, 8, 1.0), seed=0)
    L = assemble(A)
    f = GridFunction.constant(A.grid, 1.0)
    with pytest.raises(NotSelfAdjoint):
        evolve(L, f, f, 1.0)
    with pytest.raises(NotSelfAdjoint):
        wave_perturbation_gap(A, CoefficientField.identity(A.grid), f, f, 1.0)
