import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from katolab.dyadic import carleson_embedding_check, carleson_norm, layer_quadrature
from katolab.elliptic import CoefficientField, assemble
from katolab.exceptions import KatoLabError, TGridTooNarrow
from katolab.funcalc import TGrid
from katolab.grid import Grid, GridFunction, VectorField, gradient, l2_norm
from katolab.recipes import random_elliptic, smooth_complex
from katolab.squarefn import (
    PSI,
    almost_orthogonality_scan,
    constant_kernel_family,
    dyadic_family,
    kernel_condition_check,
    lp_family,
    lp_family_check,
    mollifier_apply,
    mollifier_family,
    mollifier_hat,
    mollifier_square_function,
    reduction_bound,
    reduction_identity_residual,
    sfe_estimate,
    t1_residual,
    theta_apply,
    theta_family,
    theta_mollified_family,
    theta_one,
    theta_one_many,
    theta_one_measure,
    zero_family,
)

from conftest import band_limited


@pytest.mark.parametrize("name", sorted(PSI))
def test_calderon_normalization(name):
    val, _ = quad(lambda s: PSI[name](s) ** 2 / s, 0, np.inf)
    assert val == pytest.approx(1.0, abs=1e-10)


def test_theta_constant_coefficients(grid2):
    A = CoefficientField(grid2, np.array([[1.0, 0.3j], [-0.2, 1.5]]))
    L = assemble(A)
    F = VectorField.constant(grid2, [1.0, 2.0 - 1j])
    assert np.allclose(theta_apply(L, 0.2, F).values, 0, atol=1e-12)
    assert np.allclose(theta_one(L, 0.2).components, 0, atol=1e-12)


@given(st.integers(0, 300))
def test_theta_on_gradients(seed):
    g = Grid(2, 8, 1.0)
    L = assemble(random_elliptic(g, seed=seed))
    f = band_limited(g, seed)
    t = 0.03 + (seed % 5) / 10
    lhs = theta_apply(L, t, gradient(f)).values
    rhs = -L.resolvent_solve(t, t * (L.matrix @ f.values))
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(np.linalg.norm(rhs), 1)


def test_theta_one_linearity_and_batch(grid2):
    L = assemble(random_elliptic(grid2, seed=3))
    t = 0.15
    gamma = theta_one(L, t).components
    for j in range(2):
        e = VectorField.constant(grid2, np.eye(2)[j])
        assert np.allclose(gamma[j], theta_apply(L, t, e).values, atol=1e-12)
    many = theta_one_many(L, [t, 2 * t])
    assert np.allclose(many[0], gamma, atol=1e-10)


def test_theta_one_decays_for_small_t():
    g = Grid(2, 16, 1.0)
    L = assemble(smooth_complex(g, amplitude=0.05, seed=1))
    sup = [np.max(np.abs(theta_one(L, t).components)) for t in (1e-1, 1e-2, 1e-3)]
    assert sup[0] > sup[1] > sup[2]
    assert sup[2] < 0.05 * sup[0]


def test_mollifier_preserves_constants_and_approximates(grid1):
    one = GridFunction.constant(grid1, 2.5)
    for t in (0.01, 0.1, 0.5):
        assert np.allclose(mollifier_apply(t, one).values, 2.5, atol=1e-13)
    f = band_limited(grid1, 1, max_mode=2)
    errs = [l2_norm(mollifier_apply(t, f) - f) for t in (0.2, 0.1, 0.05)]
    assert errs[0] > errs[1] > errs[2]
    with pytest.raises(ValueError):
        mollifier_apply(0.6, f)


def test_mollifier_hat_oracle():
    # 1-D symbol against a direct quadrature of the normalized bump
    bump = lambda x: np.exp(1 - 1 / (1 - x * x)) if abs(x) < 1 else 0.0  # noqa: E731
    mass, _ = quad(bump, -1, 1)
    for s in (0.0, 1.0, 4.0):
        direct, _ = quad(lambda x: bump(x) * np.cos(s * x), -1, 1)
        assert mollifier_hat(1, s)[0] == pytest.approx(direct / mass, abs=1e-10)


@pytest.mark.parametrize("mode", [1, 3])
def test_plancherel(mode):
    g = Grid(1, 256, 1.0)
    f = GridFunction.fourier_mode(g, (mode,))
    C, _ = quad(lambda s: (1 - mollifier_hat(1, s)[0] ** 2) ** 2 / s**3, 0, np.inf, limit=400)
    oracle = C * l2_norm(gradient(f)) ** 2
    value = mollifier_square_function(f, TGrid(1e-5, 1e3, 4096))
    assert value == pytest.approx(oracle, rel=1e-3)


def test_lp_reproduction():
    g = Grid(1, 64, 1.0)
    tg = TGrid(1e-4, 10.0, 512)
    assert lp_family_check(tg, GridFunction.fourier_mode(g, (3,))) <= 1e-3
    assert lp_family_check(tg, band_limited(g, 2, max_mode=8)) <= 1e-3
    err, kern = lp_family_check(tg, GridFunction.constant(g, 2.0), return_kernel=True)
    assert err == 0.0 and kern == pytest.approx(2.0)
    with pytest.raises(TGridTooNarrow):
        lp_family_check(TGrid(0.05, 0.1, 32), band_limited(g, 2))


def test_sfe_examples():
    g = Grid(1, 64, 1.0)
    tg = TGrid(1e-4, 10.0, 512)
    f = band_limited(g, 4, max_mode=6, mean_zero=True)
    assert sfe_estimate(zero_family(g), f, tg).ratio == 0.0
    rep = sfe_estimate(lp_family(g), f, tg)
    assert rep.ratio == pytest.approx(1.0, abs=1e-3)
    assert rep.square_function_value >= 0 and rep.input_norm > 0
    L = assemble(CoefficientField.identity(g))
    th = sfe_estimate(theta_family(L), gradient(f), TGrid.spanning(L, 8, 512))
    assert th.ratio == pytest.approx(0.5, abs=1e-3)


def test_ao_scan_self_and_decay():
    g = Grid(1, 256, 1.0)
    # keep 1/t and 1/s inside the resolved band of wavenumbers; outside it the
    # finite torus and the Nyquist cutoff produce decay of their own
    tg = TGrid(0.003, 0.03, 16)
    scan = almost_orthogonality_scan(lp_family(g), tg, tg)
    assert np.array_equal(np.argmax(scan.opnorm, axis=1), np.arange(16))
    other = almost_orthogonality_scan(lp_family(g, "exponential"), tg, tg)
    assert other.alpha > 0 and other.alpha_small_t > 0 and other.alpha_large_t > 0
    # P_t has no cancellation: no decay when s >> t
    moll = almost_orthogonality_scan(mollifier_family(g), tg, tg)
    assert abs(moll.alpha_small_t) < 0.1
    assert moll.alpha_large_t > 0.5
    assert moll.r2 < other.r2


def test_ao_power_matches_svd():
    g = Grid(1, 32, 1.0)
    tg = TGrid(0.02, 0.5, 16)
    sg = TGrid(0.02, 0.5, 16)
    V = dyadic_family(g)
    a = almost_orthogonality_scan(V, tg, sg, method="svd")
    b = almost_orthogonality_scan(V, tg, sg, method="power")
    # 20 power steps from 5 starts: close to the SVD value, never above it
    assert np.allclose(a.opnorm, b.opnorm, rtol=1e-2, atol=1e-8)
    assert np.all(b.opnorm <= a.opnorm * (1 + 1e-10))


@given(st.integers(0, 100))
def test_reduction_identity(seed):
    g = Grid(1, 32, 1.0)
    L = assemble(random_elliptic(g, seed=seed))
    f = band_limited(g, seed)
    assert reduction_identity_residual(L, f, 0.05 + (seed % 4) / 10) <= 1e-9


def test_reduction_bound_with_recorded_resolvent_norm():
    g = Grid(1, 32, 1.0)
    L = assemble(random_elliptic(g, seed=2))
    tg = TGrid(1e-3, 0.5, 64)
    for s in range(5):
        out = reduction_bound(L, band_limited(g, s), tg, resolvent_norms=True)
        factor = (1 + out["resolvent_norm"]) ** 2
        assert out["lhs"] <= factor * out["rhs"]


def test_t1_residual_constant_coefficients_single_mode():
    g = Grid(1, 64, 1.0)
    L = assemble(CoefficientField.identity(g))
    tg = TGrid(g.spacing / 64, 1.0, 16)
    f = GridFunction.fourier_mode(g, (2,))
    k = 4 * np.pi
    ts, ws = layer_quadrature(g, tg.t_min, tg.t_max, 4)
    oracle = np.sum(ws * ts**2 * k**2 / (1 + ts**2 * k**2) ** 2)
    assert t1_residual(L, f, tg) == pytest.approx(oracle, rel=1e-10)
    assert t1_residual(L, f, tg, averaging="mollifier") == pytest.approx(oracle, rel=1e-10)


def test_t1_residual_batched_and_averaging_comparable():
    g = Grid(1, 32, 1.0)
    L = assemble(random_elliptic(g, seed=1))
    tg = TGrid(g.spacing / 64, 1.0, 16)
    fs = np.stack([band_limited(g, s).values for s in range(6)])
    dy = t1_residual(L, fs, tg)
    mo = t1_residual(L, fs, tg, averaging="mollifier")
    assert dy.shape == (6,) and np.all(np.isfinite(dy))
    assert t1_residual(L, GridFunction(g, fs[0]), tg) == pytest.approx(dy[0], rel=1e-12)
    assert np.all((mo / dy > 0.1) & (mo / dy < 10))
    with pytest.raises(ValueError):
        t1_residual(L, fs, tg, averaging="median")


def test_carleson_embedding_for_theta_measure():
    g = Grid(2, 16, 1.0)
    mu = theta_one_measure(assemble(random_elliptic(g, seed=0)))
    ratios = [carleson_embedding_check(mu, band_limited(g, s)) for s in range(20)]
    assert all(np.isfinite(r) and 0 <= r < 5 for r in ratios)
    # P_t 1 = 1, so the constant gives mu(total) / (||mu||_c |torus|)
    ones = carleson_embedding_check(mu, GridFunction.constant(g))
    assert ones == pytest.approx(mu.total() / carleson_norm(mu), rel=1e-10)


def test_kernel_conditions():
    g = Grid(1, 64, 1.0)
    P = mollifier_family(g)
    vals = [kernel_condition_check(P, t, 2.0) for t in (0.02, 0.05, 0.1, 0.2)]
    assert max(vals) / min(vals) < 3
    L = assemble(random_elliptic(Grid(1, 32, 1.0), seed=0))
    th = theta_mollified_family(L)
    vals = [kernel_condition_check(th, t, 2.0, columns=range(0, 32, 4)) for t in (0.05, 0.1, 0.2)]
    assert all(np.isfinite(vals)) and max(vals) < 50
    # no decay: blows up as the grid refines at t = spacing
    grow = [kernel_condition_check(constant_kernel_family(Grid(1, n, 1.0)), 1.0 / n, 2.0, columns=[0]) for n in (16, 64)]
    assert grow[1] > 10 * grow[0]
    with pytest.raises(ValueError):
        kernel_condition_check(P, 0.1, 1.0)


def test_theta_family_not_extractable_when_flagged(grid1):
    fam = zero_family(grid1)
    fam.extractable = False
    with pytest.raises(KatoLabError):
        fam.matrix(0.1)
