import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from errors import DomainError, PoleError
from specfun import EvalResult, gamma_fn, mittag_leffler, mittag_leffler_values, wright_m, wright_m_table, wright_moment


def test_gamma_matches_factorial():
    assert gamma_fn(5.0) == pytest.approx(24.0, rel=1e-15)
    assert gamma_fn(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-15)


@pytest.mark.parametrize("x", [0.0, -1.0, -7.0])
def test_gamma_poles(x):
    with pytest.raises(PoleError):
        gamma_fn(x)


def test_gamma_overflow():
    with pytest.raises(OverflowError):
        gamma_fn(200.0)


@pytest.mark.parametrize("z", np.linspace(-20.0, 20.0, 81))
def test_ml_reduces_to_exponential(z):
    result = mittag_leffler(1.0, 1.0, z)
    assert isinstance(result, EvalResult)
    assert result.value == pytest.approx(math.exp(z), rel=1e-10)


def test_ml_cosh():
    assert mittag_leffler(2.0, 1.0, 1.0).value == pytest.approx(math.cosh(1.0), rel=1e-10)


@pytest.mark.parametrize("x", [0.25, 1.0, 2.0, 3.0])
def test_ml_half_order_is_scaled_erfc(x):
    assert mittag_leffler(0.5, 1.0, -x).value == pytest.approx(special.erfcx(x), rel=1e-10)


def test_ml_beta_two():
    z = 1.5
    assert mittag_leffler(1.0, 2.0, z).value == pytest.approx((math.exp(z) - 1.0) / z, rel=1e-12)


@pytest.mark.parametrize("alpha", [0.1, 0.3, 0.5, 0.8, 1.0])
@pytest.mark.parametrize("beta", [0.2, 0.5, 1.0, 2.5])
def test_ml_at_zero(alpha, beta):
    assert mittag_leffler(alpha, beta, 0.0).value * gamma_fn(beta) == pytest.approx(1.0, abs=1e-12)


def test_ml_error_estimate_and_terms():
    result = mittag_leffler(0.7, 1.2, 3.0)
    assert 0.0 < result.est_abs_error < 1e-10 * abs(result.value)
    assert result.terms_used > 1


def test_ml_vectorized_agrees_with_scalar():
    z = np.array([[-3.0, 0.0], [1.5, 4.0]])
    values = mittag_leffler_values(0.6, 0.9, z)
    assert values.shape == z.shape
    for idx in np.ndindex(z.shape):
        assert values[idx] == pytest.approx(mittag_leffler(0.6, 0.9, z[idx]).value, rel=1e-13)


@pytest.mark.parametrize("alpha, beta, z", [(0.5, 1.0, 60.0), (0.0, 1.0, 1.0), (0.5, -1.0, 1.0), (2.5, 1.0, 1.0)])
def test_ml_domain(alpha, beta, z):
    with pytest.raises(DomainError):
        mittag_leffler(alpha, beta, z)


@given(
    st.floats(0.3, 1.0),
    st.floats(0.3, 2.0),
    st.floats(-5.0, 5.0),
)
def test_ml_shift_identity(alpha, beta, z):
    # E_{α,β}(z) = 1/Γ(β) + z E_{α,α+β}(z)
    left = mittag_leffler(alpha, beta, z).value
    right = 1.0 / gamma_fn(beta) + z * mittag_leffler(alpha, alpha + beta, z).value
    assert left == pytest.approx(right, abs=1e-9 * (1.0 + abs(left)))


@pytest.mark.parametrize("theta", [0.0, 0.5, 1.0, 3.0, 6.0, 10.0])
def test_wright_half_is_gaussian(theta):
    expected = math.exp(-theta * theta / 4.0) / math.sqrt(math.pi)
    assert wright_m(0.5, theta).value == pytest.approx(expected, rel=1e-8)


@pytest.mark.parametrize("alpha", [0.2, 0.5, 0.8])
def test_wright_at_origin(alpha):
    assert wright_m(alpha, 0.0).value == pytest.approx(1.0 / gamma_fn(1.0 - alpha), rel=1e-14)


@pytest.mark.parametrize("alpha, theta", [(1.0, 1.0), (0.0, 1.0), (0.5, -0.1), (0.5, 31.0)])
def test_wright_domain(alpha, theta):
    with pytest.raises(DomainError):
        wright_m(alpha, theta)


def test_wright_table_shape():
    thetas = np.array([0.0, 0.5, 2.0])
    table = wright_m_table(0.4, thetas)
    assert table.shape == (3,)
    assert table[1] == pytest.approx(wright_m(0.4, 0.5).value)


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
@pytest.mark.parametrize("dbar", [0.0, 1.0, 2.0])
def test_wright_moment_quadrature(alpha, dbar):
    closed = wright_moment(alpha, dbar)
    assert closed == pytest.approx(gamma_fn(1.0 + dbar) / gamma_fn(1.0 + alpha * dbar))
    assert wright_moment(alpha, dbar, quadrature=True) == pytest.approx(closed, rel=1e-6)


def test_wright_moment_domain():
    with pytest.raises(DomainError):
        wright_moment(0.5, -1.0)
