import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import log_ndtr

import oracles
from placekit.market import BoundaryCase, ConstantRho, MarketParams
from placekit.numerics import normal_cdf, richardson_diff
from placekit.placement_bm import cost_bm, critical_time_bm
from placekit.placement_gbm import (
    GbmArgs, approx_ystar_near_t0, condition_report, cost_gbm, cost_gbm_price,
    critical_time_gbm, d2C_dtdy_gbm_at0, d2C_dy2_gbm, d2C_dy2_gbm_at0, dC_dy_gbm,
    dC_dy_gbm_at0, dC_dy_gbm_blocks, dC_dy_gbm_scaled, hit_probability_gbm, lower_t,
    optimal_y_gbm, ystar_large_t_gbm, ystar_small_sigma,
)

ONE = ConstantRho(1.0)
GBM_REF = MarketParams(mu=-0.1, sigma=0.2, s0=50.0, rebate=0.006)


def cost_excess(p, rho, y, t):
    """C(y,t) minus the unfilled cost S0(e^{mu t} - 1) + f, with every term
    kept small so a grid scan resolves the minimiser where C is flat."""
    st_ = p.sigma * math.sqrt(t)
    am, ap = p.mu - p.sigma ** 2 / 2, p.mu + p.sigma ** 2 / 2
    k = 2 * p.mu / p.sigma ** 2
    prob = np.exp(log_ndtr((-y - am * t) / st_)) + np.exp(-k * y + y + log_ndtr((-y + am * t) / st_))
    tail = np.exp(p.mu * t + log_ndtr(-(y + ap * t) / st_))
    enb = np.exp(-k * y + p.mu * t - y + log_ndtr((-y + ap * t) / st_))
    return (p.s0 * np.exp(-y) - p.c * rho) * prob - p.s0 * tail - p.s0 * enb


def zero_drift_cost(p, rho, y, t):
    st_ = p.sigma * math.sqrt(t)
    h = p.sigma ** 2 / 2 * t
    return -p.c * rho * (normal_cdf((-y + h) / st_) + math.exp(y) * normal_cdf((-y - h) / st_)) + p.fee


# ---------------------------------------------------------------- arguments

@given(st.floats(-1, 1), st.floats(0.01, 1))
def test_gbm_args_invariants(mu, sigma):
    g = GbmArgs.of(MarketParams(mu=mu, sigma=sigma))
    assert g.alpha_plus == pytest.approx(mu + sigma ** 2 / 2)
    assert g.alpha_minus == pytest.approx(mu - sigma ** 2 / 2)
    assert g.beta - g.alpha == pytest.approx(sigma, rel=1e-12)


# ---------------------------------------------------------------- cost

def test_cost_at_zero_log_depth():
    assert cost_gbm(GBM_REF, ONE, 1e-14, 0.05) == pytest.approx(-0.006, abs=1e-10)
    assert cost_gbm(GBM_REF, ONE, 0.0, 0.05) == pytest.approx(-0.006, abs=1e-12)


@pytest.mark.parametrize("y,t", [(0.004, 0.05), (0.05, 0.5), (0.2, 2.0)])
def test_zero_drift_independent_transcription(y, t):
    p = GBM_REF.replace(mu=0.0, fee=0.001)
    assert cost_gbm(p, ConstantRho(0.6), y, t) == pytest.approx(
        zero_drift_cost(p, 0.6, y, t), abs=1e-11)


@pytest.mark.parametrize("mu,y,t", [(-0.1, 0.004, 0.05), (0.0, 0.05, 0.5), (0.3, 0.1, 1.0)])
def test_cost_matches_killed_density_integral(mu, y, t):
    p = GBM_REF.replace(mu=mu, fee=0.002)
    ref = oracles.cost_gbm_quad(mu, p.sigma, p.s0, p.c, p.fee, 0.8, y, t)
    assert cost_gbm(p, ConstantRho(0.8), y, t) == pytest.approx(float(ref), abs=1e-11)


def test_hit_probability_matches_log_walk():
    g = GbmArgs.of(GBM_REF)
    ref = oracles.hit_probability(g.alpha_minus, GBM_REF.sigma, 0.01, 0.3)
    assert hit_probability_gbm(GBM_REF, 0.01, 0.3) == pytest.approx(float(ref), rel=1e-12)


def test_price_level_entry_point():
    level = 50 * math.exp(-0.01)
    assert cost_gbm_price(GBM_REF, ONE, level, 0.2) == pytest.approx(cost_gbm(GBM_REF, ONE, 0.01, 0.2), rel=1e-14)
    with pytest.raises(ValueError):
        cost_gbm_price(GBM_REF, ONE, 60.0, 0.2)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.5), st.floats(0.01, 2.0), st.floats(0.0, 1.0))
def test_zero_drift_cost_nondecreasing(sigma, t, rho):
    p = GBM_REF.replace(mu=0.0, sigma=sigma)
    ys = np.linspace(0, 6 * sigma * math.sqrt(t), 200)
    c = cost_gbm(p, ConstantRho(rho), ys, t)
    assert np.all(np.diff(c) >= -1e-12)


def test_models_agree_for_small_horizon_and_depth():
    # GBM at depth x = S0(1 - e^-y) against BM with drift mu S0, vol sigma S0
    bm = MarketParams(mu=GBM_REF.mu * GBM_REF.s0, sigma=GBM_REF.sigma * GBM_REF.s0, rebate=GBM_REF.rebate)
    gaps = []
    for t, y in [(0.005, 1e-3), (0.002, 4e-4), (0.0005, 1e-4)]:
        x = GBM_REF.s0 * (1 - math.exp(-y))
        gaps.append(abs(cost_gbm(GBM_REF, ONE, y, t) - cost_bm(bm, ONE, x, t)))
    assert gaps[0] > gaps[1] > gaps[2]


# ---------------------------------------------------------------- derivatives

def test_first_derivative_against_central_differences_grid():
    for y in np.linspace(0.001, 0.1, 20):
        for t in np.linspace(0.01, 1.0, 20):
            fd = richardson_diff(lambda v: cost_gbm(GBM_REF, ONE, v, t), float(y), 1, 1e-5)
            assert dC_dy_gbm(GBM_REF, ONE, y, t) == pytest.approx(fd, rel=1e-6, abs=1e-7)


def test_derivatives_against_50_digit_differentiation():
    rng = np.random.default_rng(5)
    for _ in range(40):
        p = MarketParams(mu=rng.uniform(-0.5, -0.05), sigma=rng.uniform(0.05, 0.5),
                         s0=rng.uniform(20, 100), rebate=0.006)
        t = rng.uniform(0.01, 2.0)
        y = rng.uniform(1e-3, 3 * p.sigma * math.sqrt(t))
        f = lambda v: oracles.cost_gbm(p.mu, p.sigma, p.s0, p.c, p.fee, 1.0, v, t)
        d1, d2 = float(oracles.deriv(f, y, 1)), float(oracles.deriv(f, y, 2))
        assert dC_dy_gbm(p, ONE, y, t) == pytest.approx(d1, rel=1e-6, abs=1e-10)
        assert dC_dy_gbm_blocks(p, ONE, y, t) == pytest.approx(d1, rel=1e-6, abs=1e-10)
        assert d2C_dy2_gbm(p, ONE, y, t) == pytest.approx(d2, rel=1e-6, abs=1e-8)


def test_boundary_derivatives():
    t = 0.01
    assert dC_dy_gbm_at0(GBM_REF, ONE, t) == pytest.approx(dC_dy_gbm(GBM_REF, ONE, 1e-10, t), rel=1e-5)
    assert d2C_dy2_gbm_at0(GBM_REF, ONE, t) == pytest.approx(d2C_dy2_gbm(GBM_REF, ONE, 1e-10, t), rel=1e-5)
    mixed = richardson_diff(lambda s: dC_dy_gbm_at0(GBM_REF, ONE, s), t, 1, 1e-5)
    assert d2C_dtdy_gbm_at0(GBM_REF, ONE, t) == pytest.approx(mixed, rel=1e-6)


def test_mixed_partial_negative_on_grid():
    for mu in (-0.5, -0.1, -0.01):
        for t in np.geomspace(1e-4, 5, 30):
            assert d2C_dtdy_gbm_at0(GBM_REF.replace(mu=mu), ONE, float(t)) < 0


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.5, -0.05), st.floats(0.05, 0.5), st.floats(0.01, 2.0), st.floats(0.0, 4.0))
def test_scaled_derivative_sign_agrees(mu, sigma, t, k):
    p = GBM_REF.replace(mu=mu, sigma=sigma)
    y = k * sigma * math.sqrt(t) + 1e-4
    raw, scaled = dC_dy_gbm(p, ONE, y, t), dC_dy_gbm_scaled(p, ONE, y, t)
    if abs(raw) > 1e-9:
        assert np.sign(raw) == np.sign(scaled)


# ---------------------------------------------------------------- optimum

def test_zero_drift_trivial():
    sol = optimal_y_gbm(GBM_REF.replace(mu=0.0), ONE, 0.5)
    assert sol.boundary_case is BoundaryCase.TRIVIAL_ZERO
    assert sol.price_level == GBM_REF.s0


def test_optimum_matches_grid_scan():
    t = 0.5
    sol = optimal_y_gbm(GBM_REF, ONE, t)
    assert sol.boundary_case is BoundaryCase.INTERIOR
    assert 0 < sol.price_level < GBM_REF.s0
    assert sol.price_level == pytest.approx(GBM_REF.s0 * math.exp(-sol.y_star))
    ys = np.linspace(0, 2 * sol.y_star, 100_001)
    far = GBM_REF.s0 * (math.exp(GBM_REF.mu * t) - 1) + GBM_REF.fee
    assert cost_gbm(GBM_REF, ONE, ys[::97], t) == pytest.approx(cost_excess(GBM_REF, 1.0, ys[::97], t) + far,
                                                           abs=1e-12)
    assert ys[np.argmin(cost_excess(GBM_REF, 1.0, ys, t))] == pytest.approx(sol.y_star, abs=1e-5)
    assert sol.diagnostics["conditions"]["rho0_ok"]


def test_optimal_price_level_decreases_in_horizon():
    t0 = critical_time_gbm(GBM_REF, ONE)[0]
    ts = np.linspace(1.01 * t0, 0.5, 40)
    levels = [optimal_y_gbm(GBM_REF, ONE, float(t)).price_level for t in ts]
    assert all(b < a for a, b in zip(levels, levels[1:]))


def test_condition_switch_at_half_variance():
    sig = 0.2
    assert condition_report(GBM_REF.replace(mu=-sig ** 2 / 2), ONE, 1.0)["a"] == 1
    assert condition_report(GBM_REF.replace(mu=-sig ** 2 / 2 + 1e-9), ONE, 1.0)["a"] == 2


# ---------------------------------------------------------------- critical time

def test_critical_time_left_panel_parameters():
    p = GBM_REF.replace(mu=-0.05)
    t0, bar, tilde, lower, diag = critical_time_gbm(p, ONE)
    assert bar == pytest.approx(0.0012, rel=1e-12)
    assert tilde == pytest.approx(2 * bar)
    assert abs(t0 - bar) / bar <= 0.10
    assert dC_dy_gbm_at0(p, ONE, t0) == pytest.approx(0.0, abs=1e-8)


def test_critical_time_ratio_converges():
    devs = []
    for c in (6e-3, 6e-4, 6e-5):
        t0, bar, *_ = critical_time_gbm(GBM_REF.replace(rebate=c), ONE)
        devs.append(abs(t0 / bar - 1))
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] <= 0.05


def test_negative_beta_lower_bound_is_tight():
    assert GbmArgs.of(GBM_REF).beta < 0
    t0, bar, tilde, lower, diag = critical_time_gbm(GBM_REF, ONE)
    assert lower < t0
    assert (t0 - lower) / t0 <= 0.25


@pytest.mark.parametrize("regime", ["beta_negative", "beta_positive"])
def test_bound_ordering_random_draws(regime):
    rng = np.random.default_rng(17 if regime == "beta_negative" else 19)
    n = 0
    while n < 50:
        sigma = rng.uniform(0.05, 0.5)
        if regime == "beta_negative":
            mu = -sigma ** 2 / 2 - rng.uniform(0.01, 0.5)
        else:
            mu = -rng.uniform(0.01, 0.99) * sigma ** 2 / 2
        p = MarketParams(mu=mu, sigma=sigma, s0=rng.uniform(20, 100), rebate=rng.uniform(1e-3, 1e-2))
        t0, bar, tilde, lower, diag = critical_time_gbm(p, ONE)
        upper = tilde if mu < -sigma ** 2 / 2 else bar
        assert lower < t0 < upper, (p, lower, t0, upper)
        assert diag["ordering_ok"]
        n += 1


def test_lower_bound_square_root_guard():
    val, ok = lower_t(GBM_REF, 1.0, -1e6)
    assert ok
    val, ok = lower_t(GBM_REF, 1e-9, 10.0)
    assert not ok and val == 0.0


def test_critical_time_rejects_degenerate():
    with pytest.raises(ValueError):
        critical_time_gbm(GBM_REF.replace(mu=0.1), ONE)
    with pytest.raises(ValueError):
        critical_time_gbm(GBM_REF.replace(rebate=0.0), ONE)


def test_cross_model_critical_time():
    bm = MarketParams(mu=GBM_REF.mu * GBM_REF.s0, sigma=GBM_REF.sigma * GBM_REF.s0, rebate=GBM_REF.rebate)
    t_bm, _ = critical_time_bm(bm, ONE)
    t_gbm = critical_time_gbm(GBM_REF, ONE)[0]
    assert abs(t_bm - t_gbm) / t_gbm <= 0.10


# ---------------------------------------------------------------- near t0

def test_near_t0_expansion():
    t0 = critical_time_gbm(GBM_REF, ONE)[0]
    for k in (1.2, 1.1, 1.05):
        t = k * t0
        y = optimal_y_gbm(GBM_REF, ONE, t).y_star
        first, second, r1, r2 = approx_ystar_near_t0(GBM_REF, ONE, t)
        assert abs(second - y) <= abs(first - y)
    assert approx_ystar_near_t0(GBM_REF, ONE, t0)[:2] == (0.0, 0.0)


def test_near_t0_bar_variant_runs():
    t0, bar, *_ = critical_time_gbm(GBM_REF, ONE)
    t = 1.2 * bar
    y = optimal_y_gbm(GBM_REF, ONE, t).y_star
    exact = abs(approx_ystar_near_t0(GBM_REF, ONE, t)[1] - y)
    proxy = abs(approx_ystar_near_t0(GBM_REF, ONE, t, use_bar_t=True)[1] - y)
    assert math.isfinite(proxy) and proxy > exact


# ---------------------------------------------------------------- regimes

def test_limit_slope_value():
    slope, _ = ystar_large_t_gbm(GBM_REF, 1.0, 80.0)
    assert slope == pytest.approx(0.16 - 0.2 * math.sqrt(0.28), rel=1e-14)
    assert slope == pytest.approx(0.0541699, abs=5e-8)


def test_limit_slope_small_sigma_limit():
    slope, _ = ystar_large_t_gbm(GBM_REF.replace(sigma=1e-6), 1.0, 80.0)
    assert slope == pytest.approx(0.1, abs=1e-6)


def test_second_order_large_t_correction():
    slope, second = ystar_large_t_gbm(GBM_REF, 1.0, 80.0)
    coef = 0.2 / (2 * math.sqrt(0.28))
    assert second - slope == pytest.approx(coef * math.log(80) / 80, rel=1e-12)


def test_small_sigma_constant():
    _, a = ystar_small_sigma(GBM_REF, 1.0, 0.01, 0.5)
    ref = math.log(50) - 0.05 + 0.5 * math.log(0.5) - math.log(0.006) + 0.5 * math.log(2 * math.pi)
    assert a == pytest.approx(ref, rel=1e-14)
    assert a == pytest.approx(9.5226, abs=0.03)


def test_regime_argument_checks():
    with pytest.raises(ValueError):
        ystar_large_t_gbm(GBM_REF.replace(mu=0.0), 1.0, 10.0)
    with pytest.raises(ValueError):
        ystar_small_sigma(GBM_REF, 1.0, 1.0, 0.5)
