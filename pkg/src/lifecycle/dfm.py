"""Closed-form lifecycle solution under a deterministic Gompertz force of mortality."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .mortality import GompertzParams, hazard, survival


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


QUAD_EPSABS = 1e-10
UNDERFLOW_ARG = 745.0  # exp(-745) is the smallest double


@dataclass(frozen=True)
class EconParams:
    r: float = 0.025
    rho: float = 0.025
    gamma: float = 4.0
    pi0: float = 0.0
    F0: float = 100.0
    horizon: float = 55.0
    tau: float | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.F0 > 0:
            raise ValueError("F0 must be positive")
        if self.pi0 < 0:
            raise ValueError("pi0 must be non-negative")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.tau is not None and not 0 < self.tau <= self.horizon:
            raise ValueError("tau must lie in (0, horizon]")

    @property
    def depletion_time(self) -> float:
        return self.horizon if self.tau is None else self.tau

    def utility(self, c):
        c = np.asarray(c, dtype=float)
        if self.gamma == 1.0:
            return np.log(c)
        return c ** (1.0 - self.gamma) / (1.0 - self.gamma)


def _income_factor(r: float, t: float) -> float:
    """``(1 - e^{-rt})/r`` with its ``r -> 0`` limit ``t``."""
    if r == 0.0:
        return t
    return -math.expm1(-r * t) / r


def gpv_annuity(params: GompertzParams, rate: float, m_star: float, T: float) -> float:
    """Temporary life annuity ``int_0^T e^{-rate*s} p(s; m_star) ds`` by adaptive quadrature."""
    if not T > 0:
        raise ValueError("T must be positive")
    tilted = params.with_modal(m_star)

    def integrand(s):
        return math.exp(-rate * s) * survival(tilted, s)

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(integrand, 0.0, T, epsabs=QUAD_EPSABS, epsrel=1e-13,
                                      limit=200)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"GPV quadrature failed: {exc}") from exc
    if err > 10 * QUAD_EPSABS + 1e-12 * abs(val):
        raise QuadratureError(f"GPV quadrature error estimate {err:.3g} too large")
    return val


def upper_gamma(a: float, x: float) -> float:
    """Non-normalized upper incomplete gamma ``Gamma(a, x)`` for real ``a`` and ``x > 0``.

    Positive ``a`` goes to scipy.  Otherwise the defining integral is
    evaluated after substituting ``s = x e^u``, which turns it into
    ``x^a int_0^inf exp(a u - x e^u) du``: smooth, with a double-exponential
    tail that is truncated once ``x e^u`` exceeds the underflow threshold.
    """
    if not x > 0:
        raise ValueError("x must be positive")
    if a > 0:
        return float(special.gammaincc(a, x) * special.gamma(a))
    upper = math.log(max(UNDERFLOW_ARG / x, 2.0))

    def f(u):
        return math.exp(a * u - x * math.exp(u))

    # split at the integrand's scale u ~ -ln(x) so quad sees both regimes
    knee = min(max(-math.log(x), 0.0), upper)
    total = 0.0
    for lo, hi in ((0.0, knee), (knee, upper)):
        if hi > lo:
            val, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=400)
            total += val
    return x ** a * total


def gpv_incomplete_gamma(params: GompertzParams, rate: float, m_star: float, T: float) -> float:
    """Closed form of the GPV through the incomplete gamma function."""
    if not T > 0:
        raise ValueError("T must be positive")
    b, x = params.b, params.x
    u0 = math.exp((x - m_star) / b)
    uT = math.exp((x - m_star + T) / b)
    a = -rate * b
    scale = b * math.exp(u0 + rate * (x - m_star))
    return scale * (upper_gamma(a, u0) - upper_gamma(a, uT))


def k_rate(econ: EconParams, params: GompertzParams, t):
    """Log-growth rate of optimal consumption ``(r - rho - lambda(t))/gamma``."""
    return (econ.r - econ.rho - np.asarray(hazard(params, t))) / econ.gamma


def _tilted_annuity(econ: EconParams, params: GompertzParams, T: float) -> float:
    # int_0^T e^{(r-rho)s/gamma} p(s)^{1/gamma} e^{-rs} ds
    rate = econ.r - (econ.r - econ.rho) / econ.gamma
    m_star = params.m + params.b * math.log(econ.gamma)
    return gpv_annuity(params, rate, m_star, T)


@dataclass(frozen=True)
class ConsumptionPath:
    econ: EconParams
    params: GompertzParams
    c0: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        g = self.econ.gamma
        out = self.c0 * np.exp((self.econ.r - self.econ.rho) * t / g) \
            * np.asarray(survival(self.params, t)) ** (1.0 / g)
        return float(out) if out.ndim == 0 else out


def consumption_path(econ: EconParams, params: GompertzParams) -> ConsumptionPath:
    tau = econ.depletion_time
    if econ.pi0 > 0 and econ.tau is None:
        raise ValueError("pension income requires an explicit wealth depletion time tau")
    annuity = _tilted_annuity(econ, params, tau)
    c0 = (econ.F0 + econ.pi0 * _income_factor(econ.r, tau)) / annuity
    return ConsumptionPath(econ, params, c0)


def wealth_path(econ: EconParams, params: GompertzParams, cpath: ConsumptionPath, t: float) -> float:
    """Wealth ``F(t)`` along the optimal path; zero at the depletion time."""
    tau = econ.depletion_time
    if t < 0 or t > tau + 1e-12:
        raise ValueError(f"t must lie in [0, {tau}]")
    if t == 0:
        return econ.F0
    spent = _tilted_annuity(econ, params, t) * cpath.c0
    return math.exp(econ.r * t) * (econ.F0 + econ.pi0 * _income_factor(econ.r, t) - spent)


def iwr_dfm(econ: EconParams, params: GompertzParams) -> float:
    """Initial withdrawal rate ``c*(0)/F0`` without pension income."""
    if econ.pi0 != 0:
        raise ValueError("initial withdrawal rate is defined for pi0 = 0")
    return consumption_path(econ, params).c0 / econ.F0


def lifetime_utility(econ: EconParams, params: GompertzParams) -> float:
    """Discounted expected utility ``int e^{-rho t} p(t) u(c*(t)) dt`` of the optimal path."""
    cp = consumption_path(econ, params)

    def f(t):
        return math.exp(-econ.rho * t) * survival(params, t) * float(econ.utility(cp(t)))

    return integrate.quad(f, 0.0, econ.depletion_time, epsabs=1e-12, epsrel=1e-12, limit=200)[0]


def write_path_csv(path, econ: EconParams, params: GompertzParams, step: float = 1.0):
    """Write ``t,age,c_star,F`` rows on a uniform grid up to the depletion time."""
    cp = consumption_path(econ, params)
    tau = econ.depletion_time
    ts = np.arange(0.0, tau + 0.5 * step, step)
    ts[-1] = min(ts[-1], tau)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "age", "c_star", "F"])
        for t in ts:
            F = wealth_path(econ, params, cp, float(t))
            w.writerow([f"{t:.6g}", f"{params.x + t:.6g}", f"{cp(t):.10g}", f"{F:.10g}"])
    return cp
