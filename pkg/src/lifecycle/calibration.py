"""Drift calibration: match the stochastic model's time-zero survival curve.

The pseudo-density ``q(t, .)`` of the hazard, weighted by the survival
indicator, is marched forward in time.  Its zeroth moment is the survival
probability, and the drift ``mu(t)`` is chosen step by step so that the
survivors' mean hazard equals the target curve's hazard ``-p_t/p``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import kernels
from .grid import LogHazardGrid, SolverSettings, time_grid
from .mortality import (DriftCurve, GompertzParams, SfmModel, SurvivalCurve,
                        survival_curve_of)

log = logging.getLogger(__name__)

EXTINCT = 1e-300


class CalibrationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class PseudoDensity:
    """Survival-weighted hazard density on the moving log-hazard grid.

    ``values`` is the density per unit ``ln(lambda)``; ``rate_density`` gives
    it per unit hazard rate.  It integrates to the survival probability.
    """

    grid: LogHazardGrid
    values: np.ndarray
    shift: float
    t: float
    sigma: float

    @property
    def hazards(self) -> np.ndarray:
        return self.grid.hazards(self.shift)

    def rate_density(self) -> np.ndarray:
        return self.values / self.hazards

    def moment(self, k: int) -> float:
        return float(np.sum(self.values * self.hazards ** k) * self.grid.dx)

    @property
    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.dx)

    @property
    def first_moment(self) -> float:
        return self.moment(1)

    @property
    def second_moment(self) -> float:
        return self.moment(2)

    def tail_fraction(self, cells: int = 5) -> float:
        total = self.values.sum()
        if total <= 0:
            return 0.0
        return float((self.values[:cells].sum() + self.values[-cells:].sum()) / total)


def _gaussian_cells(grid: LogHazardGrid, center: float, sd: float) -> np.ndarray:
    """Cell averages of a normal density in ``y`` (falls back to a linear split when narrow)."""
    if sd * 8 < grid.dx:
        j, w = grid.locate(math.exp(center), 0.0)
        out = np.zeros(grid.size)
        out[j] += (1 - w) / grid.dx
        out[j + 1] += w / grid.dx
        return out
    edges = np.concatenate(([-np.inf], 0.5 * (grid.y[1:] + grid.y[:-1]), [np.inf]))
    cdf = ndtr((edges - center) / sd)
    return np.diff(cdf) / grid.dx


def init_density(model: SfmModel, t0: float = 1e-3, grid: LogHazardGrid | None = None,
                 settings: SolverSettings | None = None) -> PseudoDensity:
    """Delta at ``lambda0`` advanced one exact lognormal step of length ``t0``."""
    if not t0 > 0:
        raise ValueError("t0 must be positive")
    if grid is None:
        grid = LogHazardGrid.build(model.lam0, model.sigma, model.horizon,
                                   settings or SolverSettings())
    mu0 = float(model.mu(0.0))
    sigma = model.sigma
    # killing exact for a constant drift when sigma = 0
    growth = math.expm1(mu0 * t0) / mu0 if mu0 != 0 else t0
    mass = math.exp(-model.lam0 * growth)
    centre = grid.y[grid.center]
    if sigma == 0:
        values = np.zeros(grid.size)
        values[grid.center] = mass / grid.dx
    else:
        values = mass * _gaussian_cells(grid, centre, sigma * math.sqrt(t0))
    shift = (mu0 - 0.5 * sigma * sigma) * t0
    return PseudoDensity(grid, values, shift, t0, sigma)


def step_forward(q: PseudoDensity, mu_t: float, dt: float, compact: bool = False) -> PseudoDensity:
    """Advance ``q`` by ``dt`` with drift ``mu_t`` held constant over the step."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    vel = mu_t - 0.5 * q.sigma ** 2
    values, shift = kernels.forward_step(q.values, q.grid.y, q.shift, vel, dt,
                                         kernels.lattice_diffusion(q.sigma, q.grid.dx, compact),
                                         q.grid.dx, compact)
    neg = values < 0
    if np.any(values < -1e-12):
        log.warning("negative pseudo-density (min %.3g) clamped at t=%.6g",
                    values.min(), q.t + dt)
    if neg.any():
        values = np.where(neg, 0.0, values)
    out = PseudoDensity(q.grid, values, shift, q.t + dt, q.sigma)
    if out.mass > 1.0 + 1e-12:
        log.warning("pseudo-density mass %.15g exceeds one at t=%.6g", out.mass, out.t)
    return out


def extract_mu(q: PseudoDensity, target: SurvivalCurve, t: float, eps: float = 1e-15) -> float:
    """``mu = (d lambda_(1)/dt + lambda_(2)) / lambda_(1)`` with the target's ``p_t``, ``p_tt``."""
    lam1 = -float(target.p_t(t))
    if not lam1 > eps:
        raise CalibrationError(f"first moment {lam1:.3g} too small at t={t}: survival extinct")
    dlam1 = -float(target.p_tt(t))
    return (dlam1 + q.second_moment) / lam1


@dataclass(frozen=True)
class CalibrationResult:
    model: SfmModel
    target: SurvivalCurve
    grid: LogHazardGrid
    times: np.ndarray
    survival_model: np.ndarray
    first_moment: np.ndarray
    second_moment: np.ndarray
    history: list = field(repr=False)
    max_residual: float = 0.0
    max_iterations: int = 0
    negative_count: int = 0

    @property
    def survival_target(self) -> np.ndarray:
        return np.asarray(self.target.p(self.times))

    @property
    def abs_err(self) -> np.ndarray:
        return np.abs(self.survival_model - self.survival_target)

    @property
    def max_abs_err(self) -> float:
        return float(self.abs_err.max())

    @property
    def drift(self) -> DriftCurve:
        return self.model.drift

    def moment_rel_err(self, min_survival: float = 1e-6) -> float:
        """Max relative gap between ``int lambda q`` and ``-p_t`` while survival exceeds ``min_survival``."""
        ok = self.survival_target > min_survival
        ref = -np.asarray(self.target.p_t(self.times))
        return float(np.max(np.abs(self.first_moment[ok] / ref[ok] - 1.0)))

    def tail_fraction(self) -> float:
        return max((d.tail_fraction() for d in self.history), default=0.0)

    def write_mu_csv(self, path, every: int = 1):
        d = self.drift
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mu"])
            for i in range(0, d.times.size, every):
                w.writerow([f"{d.times[i]:.10g}", f"{d.mu[i]:.12g}"])
            if (d.times.size - 1) % every:
                w.writerow([f"{d.times[-1]:.10g}", f"{d.mu[-1]:.12g}"])

    def write_report_csv(self, path, every: int = 1):
        target = self.survival_target
        idx = list(range(0, self.times.size, every))
        if idx[-1] != self.times.size - 1:
            idx.append(self.times.size - 1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "survival_model", "survival_target", "abs_err"])
            for i in idx:
                w.writerow([f"{self.times[i]:.10g}", f"{self.survival_model[i]:.12g}",
                            f"{target[i]:.12g}", f"{abs(self.survival_model[i] - target[i]):.3e}"])


def _as_curve(target, horizon):
    if isinstance(target, GompertzParams):
        return survival_curve_of(target, horizon if horizon is not None else 55.0)
    if isinstance(target, SurvivalCurve):
        return target
    raise TypeError("target must be GompertzParams or a SurvivalCurve")


def calibrate(target, sigma: float, settings: SolverSettings | None = None,
              horizon: float | None = None) -> CalibrationResult:
    """Find ``mu(t)`` on ``[0, horizon]`` so the model reproduces ``target``'s survival."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    settings = settings or SolverSettings()
    curve = _as_curve(target, horizon)
    D = float(horizon if horizon is not None else curve.horizon)
    times = time_grid(D, settings)
    lam0 = curve.lam0
    mu0 = curve.initial_drift
    grid = LogHazardGrid.build(lam0, sigma, D, settings)
    hz = np.asarray(curve.hazard(times), dtype=float)
    snap_idx = list(range(0, times.size, settings.history_every))
    if snap_idx[-1] != times.size - 1:
        snap_idx.append(times.size - 1)

    provisional = SfmModel(lam0, sigma, DriftCurve.constant(mu0, sigma, D), D)
    q0 = init_density(provisional, float(times[1]), grid)

    if sigma == 0:
        # the hazard path is deterministic: follow the target hazard exactly
        shifts = np.log(hz / lam0)
        mu = np.gradient(np.log(hz), times)
        if isinstance(curve.__dict__.get("params"), GompertzParams):
            mu[:] = curve.params.eta
        mass, _ = kernels.survival_march(q0.values, grid.y, grid.dx, times, shifts, 1,
                                         times.size - 1, 0.0)
        survival = np.concatenate(([1.0], mass))
        lam_path = lam0 * np.exp(shifts)
        m1 = survival * lam_path
        m2 = m1 * lam_path
        history = []
        for i in snap_idx:
            v = np.zeros(grid.size)
            v[grid.center] = survival[i] / grid.dx
            history.append(PseudoDensity(grid, v, float(shifts[i]), float(times[i]), 0.0))
        drift = DriftCurve(times, mu, shifts, 0.0)
        return CalibrationResult(SfmModel(lam0, 0.0, drift, D), curve, grid, times,
                                 survival, m1, m2, history)

    # a sub-cell initial spread loses its contribution to the mean hazard; pick the
    # initial shift so the discrete density reproduces the target hazard at t0
    rel = np.exp(grid.y - grid.y[grid.center])
    shift0 = math.log(hz[1] / lam0) - math.log(np.sum(rel * q0.values) / np.sum(q0.values))
    v0 = shift0 / times[1]
    out = kernels.calibrate_march(q0.values, grid.y, grid.dx, times, shift0, v0,
                                  sigma, hz, settings.newton_tol,
                                  settings.newton_max_iter, snap_idx[1:],
                                  settings.compact_from(sigma, grid.dx))
    velocity = out["velocity"]
    velocity[0] = v0
    shifts = out["shifts"]
    shifts[0] = 0.0
    mass, m1, m2 = out["mass"], out["m1"], out["m2"]
    mass[0], m1[0], m2[0] = 1.0, lam0, lam0 * lam0
    mu = np.empty(times.size)
    mu[0] = mu0
    mu[1:-1] = 0.5 * (velocity[:-1] + velocity[1:]) + 0.5 * sigma ** 2
    mu[-1] = velocity[-1] + 0.5 * sigma ** 2
    # the first step's velocity absorbs the sub-cell correction; report a clean value
    w = times[1] / times[2]
    mu[1] = (1 - w) * mu[0] + w * mu[2]
    if out["negative_count"]:
        log.warning("calibration clamped %d negative density values", out["negative_count"])
    if out["max_residual"] > 1e-8:
        log.warning("drift root-finding residual %.3g", out["max_residual"])

    history = [PseudoDensity(grid, np.zeros(grid.size), 0.0, 0.0, sigma)]
    history[0].values[grid.center] = 1.0 / grid.dx
    for k, i in enumerate(snap_idx[1:]):
        history.append(PseudoDensity(grid, out["snapshots"][k], float(shifts[i]),
                                     float(times[i]), sigma))
    drift = DriftCurve(times, mu, shifts, sigma)
    return CalibrationResult(SfmModel(lam0, sigma, drift, D), curve, grid, times, mass, m1, m2,
                             history, out["max_residual"], out["max_iterations"],
                             out["negative_count"])
