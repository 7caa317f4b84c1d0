"""Optimal consumption under a stochastic force of mortality.

The value function scales as ``J(t, lam, F) = F^(1-gamma) a(t, lam) / (1-gamma)``;
the solver works with ``beta = a^(1/gamma)``, the wealth-to-consumption ratio,
so that the optimal rule is ``c = F / beta``.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from . import kernels
from .calibration import calibrate, init_density
from .dfm import EconParams, iwr_dfm
from .grid import LogHazardGrid, SolverSettings, node_index, time_grid
from .mortality import GompertzParams, SfmModel, survival

log = logging.getLogger(__name__)

GAMMA_ONE_TOL = 1e-12


class PolicyError(ArithmeticError):
    pass


@dataclass(frozen=True)
class PolicySurface:
    """``beta(t, lam)`` on stored time slices of the moving log-hazard grid."""

    times: np.ndarray
    grid: LogHazardGrid
    shifts: np.ndarray
    beta: np.ndarray  # (len(times), grid.size)
    gamma: float
    sigma: float
    r: float
    lam0: float
    negative_count: int = 0

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def _slice(self, t):
        t = min(max(float(t), 0.0), self.horizon)
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), self.times.size - 2)
        w = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return k, min(max(w, 0.0), 1.0)

    def _interp_y(self, k, lam):
        y = np.log(np.asarray(lam, dtype=float)) - self.shifts[k]
        return np.interp(y, self.grid.y, self.beta[k])

    def beta_at(self, t: float, lam):
        """Bilinear interpolation; hazards off the grid take the boundary value."""
        k, w = self._slice(t)
        out = (1 - w) * self._interp_y(k, lam) + w * self._interp_y(k + 1, lam)
        return float(out) if np.ndim(out) == 0 else out

    def a_at(self, t: float, lam):
        return np.asarray(self.beta_at(t, lam)) ** self.gamma

    def consumption(self, t: float, lam, F):
        """Optimal consumption rate ``F / beta(t, lam)``."""
        return np.asarray(F, dtype=float) / np.asarray(self.beta_at(t, lam))

    def withdrawal_rate(self, t: float = 0.0, lam: float | None = None) -> float:
        lam = self.lam0 if lam is None else lam
        return 1.0 / float(self.beta_at(t, lam))

    def monotonicity_violation(self) -> float:
        """Largest increase of ``beta`` between neighbouring hazards, relative to the slice maximum."""
        worst = 0.0
        for row in self.beta:
            top = row.max()
            if top <= 0:
                continue
            worst = max(worst, float(np.max(np.diff(row))) / top)
        return worst

    def write_csv(self, path, time_every: int = 1, node_every: int = 1):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "lambda", "beta"])
            for k in range(0, self.times.size, time_every):
                lam = self.grid.hazards(self.shifts[k])
                for j in range(0, self.grid.size, node_every):
                    w.writerow([f"{self.times[k]:.10g}", f"{lam[j]:.10g}",
                                f"{self.beta[k, j]:.12g}"])


def _check_econ(econ: EconParams, model: SfmModel):
    if abs(econ.rho - econ.r) > 1e-15:
        raise ValueError("the stochastic-mortality policy requires rho == r")
    if econ.pi0 != 0:
        raise ValueError("the stochastic-mortality policy requires pi0 == 0")
    if econ.horizon > model.horizon + 1e-9:
        raise ValueError("policy horizon exceeds the calibrated model horizon")


def _solver_geometry(model: SfmModel, horizon: float, settings: SolverSettings):
    times = time_grid(horizon, settings)
    grid = LogHazardGrid.build(model.lam0, model.sigma, model.horizon, settings)
    d = model.drift
    if d.times.size >= times.size and np.allclose(d.times[:times.size], times, rtol=0, atol=1e-12):
        shifts = np.array(d.shift[:times.size])
    else:
        shifts = np.asarray(d.log_shift(times), dtype=float)
    return times, grid, shifts


def solve_policy(model: SfmModel, econ: EconParams,
                 settings: SolverSettings | None = None) -> PolicySurface:
    """March the wealth-to-consumption ratio backward from ``beta(T, .) = 0``."""
    _check_econ(econ, model)
    settings = settings or SolverSettings()
    times, grid, shifts = _solver_geometry(model, econ.horizon, settings)
    n_end = times.size - 1
    store = sorted(set(range(0, times.size, settings.store_every)) | {n_end})
    beta0, stored, negatives = kernels.hjb_march(grid.y, grid.dx, times, shifts, n_end,
                                                 model.sigma, econ.gamma, econ.r, store)
    if negatives:
        log.warning("policy solve clamped %d negative beta values", negatives)
    if not np.all(np.isfinite(beta0)):
        raise PolicyError("policy solve produced non-finite values")
    idx = np.array(store)
    return PolicySurface(times[idx], grid, shifts[idx], stored, econ.gamma, model.sigma,
                         econ.r, model.lam0, negatives)


def _point_mass(grid: LogHazardGrid, lam: float, shift: float) -> np.ndarray:
    j, w = grid.locate(lam, shift)
    q = np.zeros(grid.size)
    q[j] = (1 - w) / grid.dx
    q[j + 1] = w / grid.dx
    return q


def _annuity_from_survival(times: np.ndarray, surv: np.ndarray, r: float, t: float) -> float:
    disc = np.exp(-r * (times - t))
    return float(integrate.trapezoid(disc * surv, times))


def conditional_survival_curve(model: SfmModel, t: float, lam: float, T: float,
                               settings: SolverSettings | None = None):
    """``s -> p(t, s, lam)`` on the solver nodes of ``[t, T]`` with the drift frozen."""
    settings = settings or SolverSettings()
    times, grid, shifts = _solver_geometry(model, T, settings)
    n0 = node_index(times, t, tol=0.5 * settings.dt + 1e-12)
    if n0 == times.size - 1:
        return times[n0:], np.ones(1)
    surv, _ = kernels.survival_march(_point_mass(grid, lam, shifts[n0]), grid.y, grid.dx,
                                     times, shifts, n0, times.size - 1, model.sigma,
                                     settings.compact_from(model.sigma, grid.dx, times[n0]))
    return times[n0:], surv


def log_utility_policy(model: SfmModel, econ: EconParams, t: float, lam: float,
                       settings: SolverSettings | None = None) -> float:
    """Consumption fraction ``1 / int_t^T e^{-r(s-t)} p(t, s, lam) ds`` for logarithmic utility."""
    if abs(econ.gamma - 1.0) > GAMMA_ONE_TOL:
        raise ValueError("log_utility_policy requires gamma == 1")
    _check_econ(econ, model)
    if t >= econ.horizon:
        return math.inf
    settings = settings or SolverSettings()
    times = time_grid(econ.horizon, settings)
    start = float(times[max(int(np.searchsorted(times, t, side="right")) - 1, 0)])
    ts, surv = conditional_survival_curve(model, start, lam, econ.horizon, settings)
    if t > start:
        # between nodes: condition the curve from the node below on surviving to t
        at_t = float(np.interp(t, ts, surv))
        keep = ts > t
        ts = np.concatenate(([t], ts[keep]))
        surv = np.concatenate(([1.0], surv[keep] / at_t))
    return 1.0 / _annuity_from_survival(ts, surv, econ.r, t)


def deferred_annuity(params: GompertzParams, r: float, t: float, T: float) -> float:
    """``int_t^T e^{-r s} p(s) ds`` under the time-zero curve."""
    if t < 0 or t > T:
        raise ValueError("need 0 <= t <= T")
    if t == T:
        return 0.0
    val, _ = integrate.quad(lambda s: math.exp(-r * s) * survival(params, s), t, T,
                            epsabs=1e-12, epsrel=1e-12, limit=200)
    return val


def forward_annuity(model: SfmModel, r: float, t: float, T: float,
                    settings: SolverSettings | None = None,
                    given_survival: bool = False) -> float:
    """``int_t^T e^{-r s} E[p(t, s, lam(t))] ds``.

    By default the expectation is over the law of ``lam(t)`` seen from time 0
    (lognormal, ignoring whether the holder is alive).  With
    ``given_survival=True`` it is over the hazard distribution of the
    survivors, i.e. the pseudo-density normalized by the survival probability.
    """
    if t < 0 or t > T:
        raise ValueError("need 0 <= t <= T")
    if T > model.horizon + 1e-9:
        raise ValueError("T exceeds the model horizon")
    if t == T:
        return 0.0
    settings = settings or SolverSettings()
    times, grid, shifts = _solver_geometry(model, T, settings)
    n0 = node_index(times, t, tol=0.5 * settings.dt + 1e-12)
    switch = settings.compact_from(model.sigma, grid.dx)
    if n0 == 0:
        q = _point_mass(grid, model.lam0, 0.0)
    elif given_survival:
        start = init_density(model, float(times[1]), grid)
        _, q = kernels.survival_march(start.values, grid.y, grid.dx, times, shifts, 1, n0,
                                      model.sigma, switch)
        mass = q.sum() * grid.dx
        if not mass > 1e-300:
            raise PolicyError(f"survival extinct before t={t}")
        q = q / mass
    elif model.sigma == 0:
        q = _point_mass(grid, model.lam0 * math.exp(shifts[n0]), shifts[n0])
    else:
        # y = ln(lam) - shift is N(ln lam0, sigma^2 t) without killing
        sd = model.sigma * math.sqrt(times[n0])
        edges = np.concatenate(([-np.inf], 0.5 * (grid.y[1:] + grid.y[:-1]), [np.inf]))
        q = np.diff(ndtr((edges - math.log(model.lam0)) / sd)) / grid.dx
    surv, _ = kernels.survival_march(q, grid.y, grid.dx, times, shifts, n0, times.size - 1,
                                     model.sigma, switch)
    ts = times[n0:]
    return float(integrate.trapezoid(np.exp(-r * ts) * surv, ts))


def withdrawal_rate_sfm(model: SfmModel, econ: EconParams,
                        settings: SolverSettings | None = None) -> float:
    """Time-zero consumption fraction at ``lam0``; logarithmic utility bypasses the PDE."""
    if abs(econ.gamma - 1.0) <= GAMMA_ONE_TOL:
        return log_utility_policy(model, econ, 0.0, model.lam0, settings)
    return solve_policy(model, econ, settings).withdrawal_rate()


@dataclass(frozen=True)
class OrderingRow:
    gamma: float
    c_sfm: float
    c_dfm: float

    @property
    def diff(self) -> float:
        return self.c_sfm - self.c_dfm

    def ordering_ok(self, equal_tol: float = 2e-4, slack: float = 1e-9) -> bool:
        """Stochastic mortality raises consumption for gamma > 1, lowers it for gamma < 1."""
        if abs(self.gamma - 1.0) <= GAMMA_ONE_TOL:
            return abs(self.diff) < equal_tol
        if self.gamma > 1:
            return self.diff >= -slack
        return self.diff <= slack


def compare_theorem1(params: GompertzParams, sigma: float, gammas, r: float = 0.02,
                     horizon: float = 30.0, settings: SolverSettings | None = None,
                     model: SfmModel | None = None) -> list[OrderingRow]:
    """Time-zero withdrawal rates of the stochastic and deterministic models per ``gamma``."""
    settings = settings or SolverSettings()
    if model is None:
        model = calibrate(params, sigma, settings, horizon).model
    rows = []
    for g in gammas:
        econ = EconParams(r=r, rho=r, gamma=g, pi0=0.0, F0=1.0, horizon=horizon)
        rows.append(OrderingRow(g, withdrawal_rate_sfm(model, econ, settings),
                                iwr_dfm(econ, params)))
    return rows


def write_theorem1_csv(path, rows_by_sigma: dict):
    """``sigma,gamma,c_sfm,c_dfm,ordering_ok`` for every ``(sigma, rows)`` entry."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sigma", "gamma", "c_sfm", "c_dfm", "ordering_ok"])
        for sigma, rows in rows_by_sigma.items():
            for row in rows:
                w.writerow([f"{sigma:g}", f"{row.gamma:g}", f"{row.c_sfm:.10g}",
                            f"{row.c_dfm:.10g}", str(row.ordering_ok()).lower()])


@dataclass
class WithdrawalTable:
    """Time-zero withdrawal rates (fractions of wealth), rows by sigma, columns by gamma."""

    sigmas: list
    gammas: list
    values: np.ndarray
    r: float
    horizon: float
    calibration_error: dict = field(default_factory=dict)

    def percent(self) -> np.ndarray:
        return 100.0 * self.values

    def cell(self, sigma: float, gamma: float) -> float:
        return float(self.values[self.sigmas.index(sigma), self.gammas.index(gamma)])

    def ordering_rows(self, params: GompertzParams) -> dict:
        """Each sigma row against the closed-form deterministic rates."""
        dfm = [iwr_dfm(EconParams(r=self.r, rho=self.r, gamma=g, horizon=self.horizon), params)
               for g in self.gammas]
        return {s: [OrderingRow(g, float(v), d) for g, v, d in zip(self.gammas, row, dfm)]
                for s, row in zip(self.sigmas, self.values)}

    def write_csv(self, path, raw: bool = False):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma"] + [f"gamma={g:g}" for g in self.gammas])
            for s, row in zip(self.sigmas, self.percent()):
                cells = [f"{v:.10f}" if raw else round_half_even(v, 2) for v in row]
                w.writerow([f"{s:g}"] + cells)


def round_half_even(value: float, places: int) -> str:
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_EVEN))


def _table_row(args):
    params, sigma, gammas, r, horizon, settings = args
    cal = calibrate(params, sigma, settings, horizon)
    rows = compare_theorem1(params, sigma, gammas, r, horizon, settings, model=cal.model)
    return [row.c_sfm for row in rows], cal.max_abs_err


def withdrawal_table(params: GompertzParams, sigmas=(0.0, 0.15, 0.25),
                     gammas=(0.5, 1.0, 1.5, 3.0, 5.0, 10.0), r: float = 0.02,
                     horizon: float = 30.0, settings: SolverSettings | None = None,
                     workers: int | None = None) -> WithdrawalTable:
    """Calibrate each sigma and solve every ``(sigma, gamma)`` cell.

    Rows are independent; ``workers > 1`` spreads them over processes without
    changing any value.
    """
    settings = settings or SolverSettings()
    jobs = [(params, s, list(gammas), r, horizon, settings) for s in sigmas]
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            results = list(ex.map(_table_row, jobs))
    else:
        results = [_table_row(j) for j in jobs]
    values = np.array([res[0] for res in results])
    errs = {s: res[1] for s, res in zip(sigmas, results)}
    return WithdrawalTable(list(sigmas), list(gammas), values, r, horizon, errs)
