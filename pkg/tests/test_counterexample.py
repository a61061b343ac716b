import numpy as np
import pytest
from hypothesis import given, strategies as st

from katolab.counterexample import (
    PerturbedOperator,
    TruncatedPair,
    b_coefficients,
    bhat,
    bhat_sup,
    c_sequence,
    chat_sup,
    derivative_matrix,
    derivative_via_finite_difference,
    finite_difference_derivative,
    log_slope,
    norm_blowup_table,
    sylvester_check,
)
from katolab.exceptions import FactorizationFailure


def test_c_sequence_values():
    c = c_sequence(1)
    assert c[1] == 0
    assert c[2] == pytest.approx(2j / (3 * np.pi), abs=1e-15)
    assert c[0] == pytest.approx(-1j / (3 * np.pi), abs=1e-15)
    assert abs(c[2]) == pytest.approx(0.21221, abs=1e-5)


def test_pair_shapes():
    pair = TruncatedPair(3)
    assert pair.size == 7
    d = np.diag(pair.D)
    assert d.max() / d.min() == pytest.approx(pair.condition_number) == 64
    assert np.allclose(pair.B, pair.B.conj().T)  # real symbol, Hermitian section


def test_sylvester_three_by_three_by_hand():
    # R[i, j] = 2^j c_{i-j} on indices -1, 0, 1, written out
    b = lambda n: 0 if n == 0 else 1j / (np.pi * n)
    c = lambda n: b(n) * 2.0**n / (1 + 2.0**n)
    idx = [-1, 0, 1]
    R = np.array([[2.0**j * c(i - j) for j in idx] for i in idx])
    assert np.allclose(R, derivative_matrix(1), atol=1e-16)
    D = np.diag([0.5, 1, 2])
    B = np.array([[b(i - j) for j in idx] for i in idx])
    assert np.abs(R @ D + D @ R - D @ B @ D).max() < 1e-15
    assert sylvester_check(1) <= 1e-12


@pytest.mark.parametrize("N", range(1, 7))
def test_sylvester_closed_form(N):
    assert sylvester_check(N) <= 1e-10


def test_sylvester_wrong_coefficients_fail():
    N = 3
    n = np.arange(-2 * N, 2 * N + 1)
    assert sylvester_check(N, b_coefficients(n) / 2) > 0.1


def test_finite_difference_central_entry():
    N = 3
    c1 = c_sequence(1)[2]
    errs = []
    for h in (1e-3, 5e-4):
        fd = finite_difference_derivative(N, h)
        errs.append(abs(fd[N + 1, N] - c1))
    assert errs[0] < 1e-4
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.05)


def test_finite_difference_band_order_two():
    e = [derivative_via_finite_difference(3, h) for h in (1e-3, 5e-4, 2.5e-4)]
    assert max(e) <= 1e-4
    orders = np.log2(np.array(e[:-1]) / np.array(e[1:]))
    assert np.all(np.abs(orders - 2) < 0.2)


def test_imaginary_direction():
    assert derivative_via_finite_difference(3, 1e-4, 1j) < 1e-4


def test_bhat_closed_form_at_pi():
    assert abs(bhat(np.pi, 2000)) < 1e-10
    theta = np.array([0.7, 2.0, 4.0])
    # away from 0 the partial sums approach theta/pi - 1
    assert np.allclose(bhat(theta, 4000).real, theta / np.pi - 1, atol=1e-3)


@given(st.floats(0.01, np.pi), st.integers(1, 60))
def test_bhat_reflection(theta, N):
    lhs = bhat(theta, N) + bhat(2 * np.pi - theta, N)
    assert abs(lhs - 2 * bhat(np.pi, N)) < 1e-12


def test_bhat_sup_tends_to_one():
    sups = [bhat_sup(N) for N in (16, 256, 4096)]
    assert sups[0] < sups[1] < sups[2] < 1.0 + 1e-9
    assert sups[2] > 0.97
    # the unwindowed sup keeps the Gibbs overshoot
    assert bhat_sup(4096, gibbs_window=False) > 1.08


@pytest.mark.parametrize("N", [2, 4, 16, 64])
def test_section_norm_below_symbol(N):
    pair = TruncatedPair(N)
    assert pair.B_norm <= bhat_sup(2 * N, gibbs_window=False) + 1e-8


def test_chat_growth():
    Ns = [2**k for k in range(4, 11)]
    vals = [chat_sup(N) for N in Ns]
    assert np.all(np.diff(vals) > 0)
    assert 0.8 <= log_slope(Ns, vals) * np.pi <= 1.2
    assert vals[4] - vals[0] == pytest.approx(np.log(16) / np.pi, rel=0.05)


def test_chat_sup_grid_doubling():
    assert chat_sup(256, 2**17) == pytest.approx(chat_sup(256), rel=1e-4)


def test_blowup_table():
    rows = norm_blowup_table([16, 64, 256])
    norms = [r.section_norm for r in rows]
    assert norms[0] < norms[1] < norms[2]
    assert all(r.section_gap >= -1e-8 for r in rows)


def test_perturbed_operator_guards():
    pair = TruncatedPair(2)
    with pytest.raises(ValueError):
        PerturbedOperator(pair, 1.0)
    op = PerturbedOperator(pair, 0.1)
    assert op.numerical_range_min() > 0
    assert np.allclose(op.R @ op.R, op.L)
    with pytest.raises(FactorizationFailure):
        PerturbedOperator(TruncatedPair(11), 1e-4).R


@pytest.mark.parametrize("bad", [0, -1, 1.5])
def test_half_width_validation(bad):
    with pytest.raises(ValueError):
        c_sequence(bad)
