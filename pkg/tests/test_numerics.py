import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from placekit.numerics import (
    IntegrationError, NumericsError, QuadratureSpec, RootBracket, bessel_i,
    finite_diff, find_root, integrate, log_bessel_i, log_normal_cdf, mills_bounds_check,
    mills_ratio, normal_cdf, normal_pdf, normal_sf, richardson_diff,
)
from placekit.market import ConstantRho, MarketParams
from placekit.placement_bm import cost_bm, dC_dx_bm
from placekit.rho_engine import TABLE1, QueueModel, depletion_density_bid, geometric_f_a


def mp_ncdf(z):
    with mp.workdps(50):
        return float(mp.ncdf(z))


# ---------------------------------------------------------------- normal law

def test_normal_cdf_at_zero_is_half():
    assert normal_cdf(0.0) == 0.5


def test_normal_pdf_at_zero():
    assert normal_pdf(0.0) == pytest.approx(0.3989422804014327, abs=1e-16)


def test_normal_cdf_minus_one_matches_50_digit_oracle():
    assert normal_cdf(-1.0) == pytest.approx(0.15865525393145707, rel=1e-15)


@pytest.mark.parametrize("z", [-37.0, -20.0, -9.0, -8.5, -3.0, 0.7, 4.0, 12.0])
def test_normal_cdf_relative_accuracy_in_tails(z):
    assert normal_cdf(z) == pytest.approx(mp_ncdf(z), rel=1e-13)


@given(st.floats(min_value=-8, max_value=8))
def test_normal_cdf_symmetry(z):
    assert abs(normal_cdf(z) + normal_cdf(-z) - 1.0) <= 1e-14


@given(st.floats(min_value=-30, max_value=30))
def test_sf_and_log_cdf_consistent(z):
    assert normal_sf(z) == pytest.approx(normal_cdf(-z), rel=1e-14, abs=1e-300)
    assert log_normal_cdf(z) == pytest.approx(math.log(mp_ncdf(z)), rel=1e-12, abs=1e-15)


def test_normal_functions_vectorise():
    z = np.linspace(-3, 3, 7)
    out = normal_cdf(z)
    assert out.shape == (7,)
    np.testing.assert_allclose(out, [mp_ncdf(v) for v in z], rtol=1e-14)


@given(st.floats(min_value=0.0, max_value=30.0))
def test_mills_ratio_definition(z):
    with mp.workdps(40):
        ref = float(mp.ncdf(-z) / mp.npdf(z))
    assert mills_ratio(z) == pytest.approx(ref, rel=1e-12)


# ---------------------------------------------------------------- Mills sandwich

def test_mills_sandwich_at_two():
    lower, upper, value = mills_bounds_check(2.0)
    assert value == pytest.approx(0.02275013, abs=5e-9)
    assert lower <= value <= upper


def test_mills_sandwich_vacuous_at_zero():
    lower, upper, value = mills_bounds_check(0.0)
    assert lower == -math.inf and upper == math.inf and value == 0.5


@pytest.mark.parametrize("z", [0.5, 1.0, 4.0, 8.0])
def test_mills_sandwich_grid_points(z):
    phi = normal_pdf(z)
    lower, upper, value = mills_bounds_check(z)
    middle = phi * z / (z * z + 1)
    assert lower <= middle <= value <= upper


def test_mills_sandwich_dense_grid():
    for z in np.linspace(8.0 / 1000, 8.0, 1000):
        mills_bounds_check(float(z))


def test_mills_sandwich_rejects_negative():
    with pytest.raises(ValueError):
        mills_bounds_check(-1.0)


# ---------------------------------------------------------------- Bessel

def test_bessel_constant_terms():
    assert bessel_i(0, 0.0) == 1.0
    assert bessel_i(1, 0.0) == 0.0


def test_bessel_matches_power_series():
    n, z = 3, 2.5
    series = sum((z / 2) ** (2 * k + n) / (math.factorial(k) * math.factorial(k + n))
                 for k in range(60))
    assert bessel_i(n, z) == pytest.approx(series, abs=1e-10, rel=1e-12)


def test_bessel_recurrence_grid():
    for n in range(1, 51):
        for z in np.linspace(0.1, 50, 40):
            z = float(z)
            # scaled values share the factor e^{-z}
            lhs = bessel_i(n - 1, z, scaled=True) - bessel_i(n + 1, z, scaled=True)
            rhs = 2 * n / z * bessel_i(n, z, scaled=True)
            assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-300)


def test_bessel_overflow_needs_scaling():
    with pytest.raises(OverflowError):
        bessel_i(2, 1000.0)
    assert math.isfinite(bessel_i(2, 1000.0, scaled=True))
    assert log_bessel_i(2, 1000.0) == pytest.approx(
        float(mp.log(mp.besseli(2, 1000))), rel=1e-12)


@pytest.mark.parametrize("bad", [(-1, 1.0), (1.5, 1.0), (1, -0.1), (1, math.nan)])
def test_bessel_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        bessel_i(*bad)


# ---------------------------------------------------------------- quadrature

def test_integrate_constant():
    assert integrate(lambda x: np.ones_like(x), 0.0, 1.0) == pytest.approx(1.0, abs=1e-14)


def test_integrate_normal_density():
    assert integrate(normal_pdf, 0.0, 1.0) == pytest.approx(0.34134475, abs=5e-9)


def test_integrate_infinite_range():
    val = integrate(lambda x: np.exp(-x), 0.0, math.inf)
    assert val == pytest.approx(1.0, abs=1e-10)


def test_integrate_scalar_only_integrand():
    assert integrate(lambda x: math.sin(x), 0.0, math.pi) == pytest.approx(2.0, abs=1e-12)


def test_bid_depletion_density_normalises():
    q = QueueModel(**TABLE1, f_a=geometric_f_a(6))
    assert q.dep_b == pytest.approx(18.68)
    for ell in (1, 5, 38):
        mass = integrate(lambda s: depletion_density_bid(q, ell, s), 0.0, math.inf)
        assert mass == pytest.approx(1.0, abs=1e-8)


def test_integrate_reports_non_convergence():
    spec = QuadratureSpec(abs_tol=1e-15, rel_tol=1e-15, max_subdivisions=3)
    with pytest.raises(IntegrationError):
        integrate(lambda x: np.abs(np.sin(50 * x)), 0.0, 10.0, spec)
    total, err = integrate(lambda x: np.abs(np.sin(50 * x)), 0.0, 10.0, spec, full_output=True)
    assert err > 0


def test_integrate_rejects_reversed_limits():
    with pytest.raises(ValueError):
        integrate(normal_pdf, 1.0, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=-5, max_value=5), st.floats(min_value=0.01, max_value=5))
def test_integral_of_density_is_cdf_difference(a, w):
    b = a + w
    assert integrate(normal_pdf, a, b) == pytest.approx(mp_ncdf(b) - mp_ncdf(a), abs=1e-10)


# ---------------------------------------------------------------- roots

def test_root_linear():
    f = lambda x: x - 1
    root, _ = find_root(f, RootBracket.of(f, 0.0, 2.0))
    assert root == pytest.approx(1.0, abs=1e-12)


def test_root_inverse_cdf():
    f = lambda x: normal_cdf(x) - 0.8
    root, _ = find_root(f, RootBracket.of(f, 0.0, 2.0))
    assert root == pytest.approx(0.84162123, abs=5e-9)


def test_root_bracket_without_sign_change_rejected():
    f = lambda x: x * x
    with pytest.raises(ValueError):
        RootBracket.of(f, -1.0, 2.0)


def test_root_bracket_order_rejected():
    with pytest.raises(ValueError):
        RootBracket(2.0, 1.0, -1.0, 1.0)


def test_root_endpoint_zero():
    f = lambda x: x
    assert find_root(f, RootBracket.of(f, 0.0, 1.0)) == (0.0, 0)


@given(st.floats(min_value=0.01, max_value=0.99))
def test_root_recovers_quantiles(p):
    f = lambda x: normal_cdf(x) - p
    root, _ = find_root(f, RootBracket.of(f, -10.0, 10.0), tol=1e-12)
    with mp.workdps(30):
        ref = float(mp.sqrt(2) * mp.erfinv(2 * p - 1))
    assert root == pytest.approx(ref, abs=1e-9)


# ---------------------------------------------------------------- finite differences

def test_finite_diff_sin():
    h = 1e-4
    assert abs(finite_diff(math.sin, 0.0, 1, h) - 1.0) <= h * h


def test_finite_diff_exp_second_order():
    h = 1e-3
    assert abs(finite_diff(math.exp, 1.0, 2, h) - math.e) <= h * h * 10 + 1e-8


def test_richardson_improves_accuracy():
    plain = abs(finite_diff(math.exp, 1.0, 1, 1e-2) - math.e)
    rich = abs(richardson_diff(math.exp, 1.0, 1, 1e-2) - math.e)
    assert rich < plain / 100


def test_finite_diff_argument_checks():
    with pytest.raises(ValueError):
        finite_diff(math.sin, 0.0, 3)
    with pytest.raises(ValueError):
        finite_diff(math.sin, 0.0, 1, 0.0)


def test_finite_diff_of_bm_cost_matches_analytic():
    p = MarketParams(mu=-0.25, sigma=0.2, rebate=0.006)
    rho = ConstantRho(1.0)
    t, x = 0.2, 0.05
    fd = finite_diff(lambda v: cost_bm(p, rho, v, t), x, 1, 1e-4)
    assert fd == pytest.approx(dC_dx_bm(p, rho, x, t), abs=1e-6)


def test_error_hierarchy():
    assert issubclass(IntegrationError, NumericsError)
    assert issubclass(NumericsError, ArithmeticError)
