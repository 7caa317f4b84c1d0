import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st
from scipy import integrate

from lifecycle.dfm import (EconParams, consumption_path, gpv_annuity, gpv_incomplete_gamma,
                           iwr_dfm, k_rate, lifetime_utility, upper_gamma, wealth_path,
                           write_path_csv)
from lifecycle.mortality import GompertzParams, hazard, survival

P = GompertzParams()
BASE = EconParams(r=0.025, rho=0.025, gamma=4.0, F0=100.0, horizon=55.0)


def _wealth_derivatives(econ, cp, t, h):
    f = [wealth_path(econ, P, cp, t + k * h) for k in (-2, -1, 0, 1, 2)]
    d1 = (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * h)
    d2 = (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * h * h)
    return f[2], d1, d2


@pytest.mark.parametrize("gamma,c0", [(4.0, 4.605), (8.0, 4.121)])
def test_initial_consumption_benchmarks(gamma, c0):
    cp = consumption_path(EconParams(gamma=gamma), P)
    assert cp.c0 == pytest.approx(c0, abs=5e-3)


@pytest.mark.parametrize("t,c", [(5, 4.544), (10, 4.442), (25, 3.591), (35, 2.177)])
def test_consumption_path_benchmarks(t, c):
    assert consumption_path(BASE, P)(t) == pytest.approx(c, abs=5e-3)


def test_equal_rates_log_utility_consumes_survival_weighted():
    # gamma = 1, r = rho: c(t) = c0 p(t)
    econ = EconParams(gamma=1.0)
    cp = consumption_path(econ, P)
    assert cp(20.0) == pytest.approx(cp.c0 * survival(P, 20.0), rel=1e-13)


def test_gpv_against_dense_trapezoid():
    # independent oracle: fine trapezoid rule with Richardson extrapolation
    def trap(n):
        s = np.linspace(0, 30, n + 1)
        return integrate.trapezoid(np.exp(-0.02 * s) * survival(P, s), s)
    ref = (4 * trap(200_000) - trap(100_000)) / 3
    assert gpv_annuity(P, 0.02, P.m, 30.0) == pytest.approx(ref, rel=1e-11)


@pytest.mark.parametrize("a,x", [(1.5, 0.3), (-0.05, 0.07), (-1.0, 0.2), (-2.5, 1.3), (0.0, 0.4)])
def test_upper_gamma_against_quadrature(a, x):
    ref, _ = integrate.quad(lambda s: s ** (a - 1) * math.exp(-s), x, np.inf,
                            epsabs=0, epsrel=1e-13, limit=400)
    assert upper_gamma(a, x) == pytest.approx(ref, rel=1e-10)


def test_upper_gamma_rejects_nonpositive_x():
    with pytest.raises(ValueError):
        upper_gamma(0.5, 0.0)


@hsettings(max_examples=60, deadline=None)
@given(r=st.floats(0.0, 0.08), T=st.floats(1.0, 55.0), shift=st.floats(-5.0, 25.0))
def test_gpv_two_evaluations_agree(r, T, shift):
    m_star = P.m + shift
    q = gpv_annuity(P, r, m_star, T)
    g = gpv_incomplete_gamma(P, r, m_star, T)
    assert g == pytest.approx(q, rel=1e-8)


def test_gpv_zero_rate_is_life_expectancy():
    e, _ = integrate.quad(lambda s: survival(P, s), 0, 55, epsabs=1e-13)
    assert gpv_annuity(P, 0.0, P.m, 55.0) == pytest.approx(e, rel=1e-12)


def test_gpv_rejects_nonpositive_horizon():
    with pytest.raises(ValueError):
        gpv_annuity(P, 0.02, P.m, 0.0)
    with pytest.raises(ValueError):
        gpv_incomplete_gamma(P, 0.02, P.m, -1.0)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 4.0, 8.0])
def test_wealth_exhausted_at_horizon(gamma):
    econ = EconParams(gamma=gamma)
    cp = consumption_path(econ, P)
    assert wealth_path(econ, P, cp, 0.0) == econ.F0
    assert abs(wealth_path(econ, P, cp, econ.horizon)) < 1e-8 * econ.F0


@pytest.mark.parametrize("econ", [BASE, EconParams(r=0.03, rho=0.05, gamma=2.0),
                                  EconParams(r=0.04, rho=0.02, gamma=0.7, pi0=2.0, tau=30.0)])
def test_budget_and_euler_lagrange_residuals(econ):
    cp = consumption_path(econ, P)
    worst_budget = worst_el = 0.0
    for t in np.linspace(1.0, econ.depletion_time - 1.0, 25):
        F, dF, d2F = _wealth_derivatives(econ, cp, float(t), 0.05)
        worst_budget = max(worst_budget, abs(dF - (econ.r * F + econ.pi0 - cp(t))))
        k = float(k_rate(econ, P, t))
        el = d2F - (k + econ.r) * dF + econ.r * k * F + k * econ.pi0
        worst_el = max(worst_el, abs(el))
    assert worst_budget < 1e-6 * econ.F0
    assert worst_el < 1e-6 * econ.F0


def test_consumption_growth_rate_is_k():
    econ = EconParams(r=0.03, rho=0.05, gamma=2.0)
    cp = consumption_path(econ, P)
    t, h = 12.0, 1e-4
    growth = (math.log(cp(t + h)) - math.log(cp(t - h))) / (2 * h)
    assert growth == pytest.approx(float(k_rate(econ, P, t)), rel=1e-7)


def test_pension_requires_depletion_time():
    with pytest.raises(ValueError):
        consumption_path(EconParams(pi0=1.0), P)
    with pytest.raises(ValueError):
        iwr_dfm(EconParams(pi0=1.0, tau=20.0), P)


def test_pension_zero_rate_income_factor():
    econ = EconParams(r=0.0, rho=0.0, gamma=2.0, pi0=3.0, tau=20.0)
    cp = consumption_path(econ, P)
    assert abs(wealth_path(econ, P, cp, 20.0)) < 1e-8


@hsettings(max_examples=40, deadline=None)
@given(F0=st.floats(1.0, 1e6), gamma=st.floats(0.3, 12.0))
def test_consumption_linear_in_wealth(F0, gamma):
    one = consumption_path(EconParams(gamma=gamma, F0=1.0), P)
    many = consumption_path(EconParams(gamma=gamma, F0=F0), P)
    assert many.c0 == pytest.approx(F0 * one.c0, rel=1e-15)


def test_iwr_matches_zero_row_r2():
    # Table 2, sigma = 0 row with a 30-year horizon
    want = [7.59, 6.12, 5.58, 5.02, 4.78, 4.61]
    for g, w in zip([0.5, 1.0, 1.5, 3.0, 5.0, 10.0], want):
        econ = EconParams(r=0.02, rho=0.02, gamma=g, horizon=30.0)
        assert 100 * iwr_dfm(econ, P) == pytest.approx(w, abs=0.03)


def test_lifetime_utility_is_optimal_against_perturbation():
    econ = EconParams(gamma=3.0)
    cp = consumption_path(econ, P)
    best = lifetime_utility(econ, P)

    def value(scale, tilt):
        # budget-feasible deviation: tilt consumption and renormalize to the same PV
        w = lambda t: math.exp(-econ.r * t) * cp(t) * math.exp(tilt * t)
        pv, _ = integrate.quad(w, 0, econ.horizon, limit=200)
        c = lambda t: cp(t) * math.exp(tilt * t) * econ.F0 / pv
        f = lambda t: math.exp(-econ.rho * t) * survival(P, t) * float(econ.utility(c(t)))
        return integrate.quad(f, 0, econ.horizon, limit=200)[0]

    assert value(1.0, 0.0) == pytest.approx(best, rel=1e-9)
    for tilt in (-0.01, 0.01):
        assert value(1.0, tilt) < best


def test_write_path_csv(tmp_path):
    path = tmp_path / "path.csv"
    write_path_csv(path, BASE, P)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,age,c_star,F"
    assert len(lines) == 57
    row35 = [float(v) for v in lines[36].split(",")]
    assert row35[0] == 35 and row35[1] == 100
    assert row35[2] == pytest.approx(2.177, abs=5e-3)


@pytest.mark.parametrize("bad", [dict(gamma=0.0), dict(F0=0.0), dict(pi0=-1.0),
                                 dict(horizon=0.0), dict(tau=60.0)])
def test_econ_validation(bad):
    with pytest.raises(ValueError):
        EconParams(**bad)


def test_k_rate_vectorized():
    t = np.array([0.0, 10.0])
    k = k_rate(BASE, P, t)
    assert np.allclose(k, -hazard(P, t) / 4.0)
