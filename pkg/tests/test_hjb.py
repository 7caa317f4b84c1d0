import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from lifecycle.dfm import EconParams, gpv_annuity, iwr_dfm
from lifecycle.hjb import (OrderingRow, compare_theorem1, conditional_survival_curve,
                           deferred_annuity, forward_annuity, log_utility_policy,
                           round_half_even, solve_policy, withdrawal_rate_sfm,
                           withdrawal_table, write_theorem1_csv)
from lifecycle.mortality import GompertzParams, SfmModel, survival

P = GompertzParams()


def econ(gamma, r=0.02, horizon=30.0, **kw):
    return EconParams(r=r, rho=r, gamma=gamma, horizon=horizon, F0=1.0, **kw)


@pytest.fixture(scope="module")
def policy_015_g3(calibrations):
    return solve_policy(calibrations.get(0.15, 30.0).model, econ(3.0))


# -- withdrawal rates -------------------------------------------------------------

@pytest.mark.parametrize("sigma,gamma,want,tol", [(0.15, 3.0, 5.04, 0.05), (0.0, 5.0, 4.78, 0.03),
                                                  (0.25, 0.5, 7.44, 0.05), (0.25, 10.0, 4.63, 0.05)])
def test_withdrawal_rate_cells(calibrations, sigma, gamma, want, tol):
    model = calibrations.get(sigma, 30.0).model
    assert 100 * withdrawal_rate_sfm(model, econ(gamma)) == pytest.approx(want, abs=tol)


def test_deterministic_policy_matches_closed_form():
    model = SfmModel.deterministic(P, 30.0, np.linspace(0, 30, 3))
    for g in (0.5, 3.0):
        pde = solve_policy(model, econ(g)).withdrawal_rate()
        assert pde == pytest.approx(iwr_dfm(econ(g), P), abs=1e-7)


# -- logarithmic utility ----------------------------------------------------------

@pytest.mark.parametrize("sigma", [0.0, 0.15, 0.25])
def test_log_utility_rate_is_sigma_free(calibrations, sigma):
    model = calibrations.get(sigma, 30.0).model
    rate = log_utility_policy(model, econ(1.0), 0.0, P.lam0)
    assert 100 * rate == pytest.approx(6.12, abs=0.03)
    assert rate == pytest.approx(iwr_dfm(econ(1.0), P), abs=2e-6)


def test_log_utility_deterministic_identity(calibrations):
    model = calibrations.get(0.0, 30.0).model
    assert log_utility_policy(model, econ(1.0), 0.0, P.lam0) == pytest.approx(
        iwr_dfm(econ(1.0), P), rel=1e-7)


def test_log_utility_near_horizon_blows_up(calibrations):
    model = calibrations.get(0.15, 30.0).model
    lam = float(P.lam0 * math.exp(30 * P.eta))
    # the annuity over a short gap is ~ gap * (1 - (r + lam) gap / 2)
    for gap in (1.0, 0.1, 0.01):
        rate = log_utility_policy(model, econ(1.0), 30.0 - gap, lam)
        assert abs(rate * gap - 1.0) <= (0.02 + 1.5 * lam) * gap
    assert log_utility_policy(model, econ(1.0), 30.0, lam) == math.inf


def test_log_utility_rejects_other_gamma(calibrations):
    model = calibrations.get(0.15, 30.0).model
    with pytest.raises(ValueError):
        log_utility_policy(model, econ(2.0), 0.0, P.lam0)


def test_gamma_one_pde_agrees_with_annuity(calibrations):
    model = calibrations.get(0.15, 30.0).model
    pde = solve_policy(model, econ(1.0)).withdrawal_rate()
    assert pde == pytest.approx(log_utility_policy(model, econ(1.0), 0.0, P.lam0), abs=1e-6)


def test_conditional_survival_curve_from_origin(calibrations):
    model = calibrations.get(0.15, 30.0).model
    ts, surv = conditional_survival_curve(model, 0.0, P.lam0, 30.0)
    i = int(np.argmin(np.abs(ts - 20.0)))
    assert surv[i] == pytest.approx(survival(P, ts[i]), abs=1e-3)


# -- policy surface ---------------------------------------------------------------

def test_policy_surface_invariants(policy_015_g3):
    pol = policy_015_g3
    assert pol.negative_count == 0
    assert np.all(pol.beta >= 0)
    assert np.all(pol.beta[-1] == 0)
    assert pol.times[-1] == 30.0
    assert pol.monotonicity_violation() <= 1e-12


@hsettings(max_examples=50, deadline=None)
@given(t=st.floats(0, 29.5), lam=st.floats(1e-3, 2.0), F=st.floats(1e-3, 1e7),
       k=st.integers(-20, 20))
def test_consumption_scales_with_wealth(policy_015_g3, t, lam, F, k):
    c = policy_015_g3.consumption(t, lam, F)
    # binary scaling is exact in floating point; any other factor to 1 ulp
    assert policy_015_g3.consumption(t, lam, F * 2.0 ** k) == c * 2.0 ** k
    assert policy_015_g3.consumption(t, lam, 3.7 * F) == pytest.approx(3.7 * c, rel=4.5e-16)  # two roundings per side: <= 2 ulp


def test_value_scaling_relation(policy_015_g3):
    pol = policy_015_g3
    b = pol.beta_at(5.0, 0.02)
    assert pol.a_at(5.0, 0.02) == pytest.approx(b ** 3, rel=1e-14)
    assert pol.withdrawal_rate() == pytest.approx(1.0 / pol.beta_at(0.0, P.lam0))


def test_policy_rejects_unsupported_economics(calibrations):
    model = calibrations.get(0.15, 30.0).model
    with pytest.raises(ValueError):
        solve_policy(model, EconParams(r=0.02, rho=0.03, gamma=3.0, horizon=30.0))
    with pytest.raises(ValueError):
        solve_policy(model, econ(3.0, pi0=1.0, tau=30.0))
    with pytest.raises(ValueError):
        solve_policy(model, econ(3.0, horizon=40.0))


def test_policy_surface_csv(policy_015_g3, tmp_path):
    path = tmp_path / "policy_surface.csv"
    policy_015_g3.write_csv(path, time_every=200, node_every=50)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "lambda", "beta"]
    assert len(rows) > 10


# -- ordering ------------------------------------------------------------------------

def test_compare_examples(calibrations):
    rows = {r.gamma: r for r in compare_theorem1(P, 0.25, [3.0], model=calibrations.get(0.25, 30.0).model)}
    assert 100 * rows[3.0].c_sfm == pytest.approx(5.06, abs=0.05)
    assert 100 * rows[3.0].c_dfm == pytest.approx(5.02, abs=0.005)
    assert rows[3.0].diff > 0
    rows = {r.gamma: r for r in compare_theorem1(P, 0.15, [0.5, 1.0],
                                                 model=calibrations.get(0.15, 30.0).model)}
    assert rows[0.5].diff < 0
    assert abs(100 * rows[1.0].diff) < 0.02


def test_ordering_row_logic():
    assert OrderingRow(3.0, 0.051, 0.050).ordering_ok()
    assert not OrderingRow(3.0, 0.049, 0.050).ordering_ok()
    assert OrderingRow(0.5, 0.07, 0.08).ordering_ok()
    assert not OrderingRow(0.5, 0.08, 0.07).ordering_ok()
    assert OrderingRow(1.0, 0.0612, 0.06121).ordering_ok()
    assert not OrderingRow(1.0, 0.0612, 0.0616).ordering_ok()


def test_theorem_report_csv(tmp_path):
    path = tmp_path / "theorem1_report.csv"
    write_theorem1_csv(path, {0.15: [OrderingRow(3.0, 0.0504, 0.0502)]})
    assert path.read_text().splitlines() == ["sigma,gamma,c_sfm,c_dfm,ordering_ok",
                                             "0.15,3,0.0504,0.0502,true"]


def test_withdrawal_table_worker_count_invariant(tmp_path):
    kw = dict(sigmas=(0.0, 0.15), gammas=(1.0, 3.0), horizon=10.0)
    one = withdrawal_table(P, workers=1, **kw)
    two = withdrawal_table(P, workers=2, **kw)
    assert np.array_equal(one.values, two.values)
    one.write_csv(tmp_path / "a.csv")
    two.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@pytest.mark.parametrize("value,want", [(7.585, "7.58"), (7.595, "7.60"), (6.125, "6.12"),
                                        (6.135, "6.14"), (4.6188, "4.62")])
def test_half_even_rounding(value, want):
    # the decimal repr of the float decides ties, e.g. 7.585 is stored just below
    assert round_half_even(value, 2) == want


# -- annuities ---------------------------------------------------------------------

def test_deferred_annuity_identities():
    assert deferred_annuity(P, 0.02, 0.0, 55.0) == pytest.approx(gpv_annuity(P, 0.02, P.m, 55.0),
                                                                  rel=1e-10)
    assert deferred_annuity(P, 0.02, 55.0, 55.0) == 0.0
    split = gpv_annuity(P, 0.02, P.m, 55.0) - gpv_annuity(P, 0.02, P.m, 10.0)
    assert deferred_annuity(P, 0.02, 10.0, 55.0) == pytest.approx(split, rel=1e-10)
    with pytest.raises(ValueError):
        deferred_annuity(P, 0.02, 20.0, 10.0)


def test_forward_annuity_degenerate_cases(calibrations):
    model = calibrations.get(0.15).model
    assert forward_annuity(model, 0.02, 0.0, 55.0) == pytest.approx(
        deferred_annuity(P, 0.02, 0.0, 55.0), rel=1e-4)
    assert forward_annuity(model, 0.02, 55.0, 55.0) == 0.0
    det = calibrations.get(0.0).model
    want = deferred_annuity(P, 0.02, 10.0, 55.0) / survival(P, 10.0)
    assert forward_annuity(det, 0.02, 10.0, 55.0) == pytest.approx(want, rel=1e-5)
    assert forward_annuity(det, 0.02, 10.0, 55.0, given_survival=True) == pytest.approx(want, rel=1e-5)
    with pytest.raises(ValueError):
        forward_annuity(model, 0.02, 20.0, 10.0)


def test_forward_annuity_exceeds_deferred_ratio_under_survivor_weighting(calibrations):
    # survivors have lower hazards on average, so their forward price is higher
    model = calibrations.get(0.15).model
    plain = forward_annuity(model, 0.02, 10.0, 55.0)
    given = forward_annuity(model, 0.02, 10.0, 55.0, given_survival=True)
    assert given > plain
