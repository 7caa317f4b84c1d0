"""Mortality laws: Gompertz hazard, survival curves and the lognormal hazard model."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator


@dataclass(frozen=True)
class GompertzParams:
    """Gompertz law ``lambda(t) = (1/b) exp((x + t - m)/b)``.

    x is the age at time 0, m the modal age at death and b the dispersion,
    all in years.
    """

    x: float = 65.0
    m: float = 89.335
    b: float = 9.5

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError("b must be positive")
        if not self.m > 0:
            raise ValueError("m must be positive")
        if self.x < 0:
            raise ValueError("x must be non-negative")

    @property
    def eta(self) -> float:
        return 1.0 / self.b

    @property
    def lam0(self) -> float:
        return math.exp((self.x - self.m) / self.b) / self.b

    def with_modal(self, m: float) -> "GompertzParams":
        return GompertzParams(self.x, m, self.b)

    def at_age(self, x: float) -> "GompertzParams":
        return GompertzParams(x, self.m, self.b)


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    return t


def _scalar_or_array(v):
    return float(v) if np.ndim(v) == 0 else v


def hazard(params: GompertzParams, t):
    t = _check_time(t)
    return _scalar_or_array(params.lam0 * np.exp(params.eta * t))


def survival(params: GompertzParams, t):
    """``p(t) = exp(b*lambda0*(1 - e^{t/b}))``."""
    t = _check_time(t)
    return _scalar_or_array(np.exp(-params.b * params.lam0 * np.expm1(t / params.b)))


def conditional_survival(params: GompertzParams, t, s):
    """Probability of reaching ``s`` given alive at ``t`` (deterministic hazard)."""
    t = _check_time(t)
    s = _check_time(s)
    if np.any(s < t):
        raise ValueError("s must not precede t")
    # ratio computed in log space: exp(-b*lam0*(e^{s/b} - e^{t/b}))
    b, l0 = params.b, params.lam0
    out = np.exp(-b * l0 * np.exp(t / b) * np.expm1((s - t) / b))
    return _scalar_or_array(out)


class SurvivalCurve:
    """Time-zero survival curve ``t -> p(t)`` with first and second derivatives."""

    horizon: float

    def p(self, t):
        raise NotImplementedError

    def p_t(self, t):
        raise NotImplementedError

    def p_tt(self, t):
        raise NotImplementedError

    def hazard(self, t):
        """Recovered deterministic hazard ``-p_t/p``."""
        return -np.asarray(self.p_t(t)) / np.asarray(self.p(t))

    @property
    def lam0(self) -> float:
        return float(self.hazard(0.0))

    @property
    def initial_drift(self) -> float:
        """Drift at time 0 implied by the curve: ``(lambda0^2 - p_tt(0)) / lambda0``."""
        l0 = self.lam0
        return float((l0 * l0 - self.p_tt(0.0)) / l0)


@dataclass(frozen=True)
class GompertzCurve(SurvivalCurve):
    params: GompertzParams
    horizon: float = 55.0

    def p(self, t):
        return survival(self.params, t)

    def p_t(self, t):
        return _scalar_or_array(-np.asarray(hazard(self.params, t)) * self.p(t))

    def p_tt(self, t):
        lam = np.asarray(hazard(self.params, t))
        return _scalar_or_array(np.asarray(self.p(t)) * (lam * lam - self.params.eta * lam))

    def hazard(self, t):
        return hazard(self.params, t)


@dataclass(frozen=True)
class TabulatedCurve(SurvivalCurve):
    """Monotone cubic (PCHIP) interpolation of tabulated ``(t, p)`` pairs."""

    t: np.ndarray
    values: np.ndarray
    _spline: PchipInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        p = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.size < 3 or t.size != p.size:
            raise ValueError("need at least three (t, p) pairs")
        if t[0] != 0.0 or p[0] != 1.0:
            raise ValueError("curve must start at t=0 with p=1")
        if np.any(np.diff(t) <= 0):
            raise ValueError("t must be strictly increasing")
        if np.any(p <= 0) or np.any(p > 1) or np.any(np.diff(p) > 0):
            raise ValueError("p must be non-increasing in (0, 1]")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", p)
        object.__setattr__(self, "_spline", PchipInterpolator(t, p, extrapolate=False))

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def p(self, t):
        return _scalar_or_array(self._spline(_check_time(t)))

    def p_t(self, t):
        return _scalar_or_array(self._spline(_check_time(t), 1))

    def p_tt(self, t):
        return _scalar_or_array(self._spline(_check_time(t), 2))


def survival_curve_of(params: GompertzParams, horizon: float = 55.0) -> GompertzCurve:
    return GompertzCurve(params, horizon)


def load_survival_csv(path) -> TabulatedCurve:
    """Read a ``t,p`` CSV (header required)."""
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["t", "p"]:
            raise ValueError(f"{path}: expected header 't,p'")
        rows = [(float(r["t"]), float(r["p"])) for r in reader]
    t, p = zip(*rows) if rows else ((), ())
    return TabulatedCurve(np.array(t), np.array(p))


@dataclass(frozen=True)
class DriftCurve:
    """Tabulated hazard drift ``mu(t)`` with the integrated log-drift ``shift``.

    ``shift[n] = int_0^{t_n} (mu - sigma^2/2) ds`` is what the solvers use; it
    is exact for the discretization that produced it.
    """

    times: np.ndarray
    mu: np.ndarray
    shift: np.ndarray
    sigma: float
    _spline: PchipInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_spline", PchipInterpolator(self.times, self.mu))

    def __call__(self, t):
        return _scalar_or_array(self._spline(t))

    def log_shift(self, t):
        return _scalar_or_array(np.interp(t, self.times, self.shift))

    def integral(self, t):
        """``int_0^t mu(s) ds``."""
        t = np.asarray(t, dtype=float)
        return _scalar_or_array(np.interp(t, self.times, self.shift) + 0.5 * self.sigma ** 2 * t)

    @classmethod
    def constant(cls, mu: float, sigma: float, horizon: float, times=None) -> "DriftCurve":
        if times is None:
            times = np.linspace(0.0, horizon, 2)
        times = np.asarray(times, dtype=float)
        return cls(times, np.full(times.size, mu), (mu - 0.5 * sigma ** 2) * times, sigma)


@dataclass(frozen=True)
class SfmModel:
    """Lognormal hazard ``d lambda = mu(t) lambda dt + sigma lambda dB``."""

    lam0: float
    sigma: float
    drift: DriftCurve
    horizon: float = 55.0

    def __post_init__(self):
        if not self.lam0 > 0:
            raise ValueError("lam0 must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.drift.times[-1] < self.horizon - 1e-9:
            raise ValueError("drift curve does not cover the horizon")

    @classmethod
    def deterministic(cls, params: GompertzParams, horizon: float = 55.0,
                      times=None) -> "SfmModel":
        """The sigma=0 model whose drift is the Gompertz growth rate."""
        return cls(params.lam0, 0.0, DriftCurve.constant(params.eta, 0.0, horizon, times), horizon)

    def mu(self, t):
        return self.drift(t)
