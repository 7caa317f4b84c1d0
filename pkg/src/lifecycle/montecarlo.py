"""Monte Carlo oracle for the lognormal hazard model.

Paths are generated in fixed-size blocks; block ``k`` draws from a Philox
stream keyed by ``(seed, k)``, so every path is reproducible from the seed
alone regardless of how blocks are scheduled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dfm import EconParams
from .hjb import PolicySurface
from .mortality import SfmModel

NORMAL_STREAM = 0
DEATH_STREAM = 1


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 100_000
    dt_sim: float = 1.0 / 52.0
    seed: int = 20240917
    antithetic: bool = False
    block_size: int = 4096
    record_step: float = 1.0

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.dt_sim > 0:
            raise ValueError("dt_sim must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.block_size < 2 or self.block_size % 2:
            raise ValueError("block_size must be an even integer >= 2")
        if not self.record_step > 0:
            raise ValueError("record_step must be positive")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even number of paths")


def _rng(seed: int, block: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block, stream])))


def record_grid(horizon: float, step: float) -> np.ndarray:
    k = int(math.floor(horizon / step + 1e-9))
    t = np.arange(k + 1) * step
    if horizon - t[-1] > 1e-9:
        t = np.append(t, horizon)
    else:
        t[-1] = horizon
    return t


@dataclass
class HazardEnsemble:
    """Simulated hazards and integrated hazards at the record times, one row per path."""

    model: SfmModel
    cfg: SimConfig
    horizon: float
    record_times: np.ndarray
    hazard: np.ndarray       # (n_paths, n_records)
    cum_hazard: np.ndarray   # (n_paths, n_records)
    death_clock: np.ndarray  # unit exponential per path; death when cum_hazard exceeds it

    @property
    def n_paths(self) -> int:
        return self.hazard.shape[0]

    def record_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.record_times - t)))
        if abs(self.record_times[i] - t) > 1e-9:
            raise ValueError(f"t={t} is not a record time")
        return i

    def blocks(self):
        """Re-generate the full-resolution paths block by block (see ``path_chunks``)."""
        for b in range(_n_blocks(self.cfg)):
            yield b, path_chunks(self.model, self.cfg, b, self.horizon)


def _n_blocks(cfg: SimConfig) -> int:
    return -(-cfg.n_paths // cfg.block_size)


def _block_width(cfg: SimConfig, block: int) -> int:
    return min(cfg.block_size, cfg.n_paths - block * cfg.block_size)


def _running_sum(start, inc):
    """Rows ``start, start+inc[0], start+inc[0]+inc[1], ...`` (faster than cumsum on axis 0)."""
    out = np.empty((inc.shape[0] + 1,) + np.shape(start))
    out[0] = start
    for k in range(inc.shape[0]):
        np.add(out[k], inc[k], out=out[k + 1])
    return out


def path_chunks(model: SfmModel, cfg: SimConfig, block: int, horizon: float):
    """Yield ``(t, lam, cum)`` per record interval for one block of paths.

    ``t`` has shape ``(m+1,)`` and includes the interval start; ``lam`` and
    ``cum`` have shape ``(m+1, width)``.  The log hazard advances by the exact
    drift increment plus ``sigma*sqrt(dt)*Z``; the integrated hazard uses the
    trapezoid rule.
    """
    width = _block_width(cfg, block)
    rng = _rng(cfg.seed, block, NORMAL_STREAM)
    rec = record_grid(horizon, cfg.record_step)
    sigma = model.sigma
    loglam = np.full(width, math.log(model.lam0))
    cum = np.zeros(width)
    for a, b in zip(rec[:-1], rec[1:]):
        m = max(1, int(math.ceil((b - a) / cfg.dt_sim - 1e-9)))
        t = np.linspace(a, b, m + 1)
        drift = np.diff(np.asarray(model.drift.log_shift(t), dtype=float))
        if cfg.antithetic:
            half = rng.standard_normal((m, (width + 1) // 2))
            z = np.concatenate((half, -half), axis=1)[:, :width]
        else:
            z = rng.standard_normal((m, width))
        inc = drift[:, None] + sigma * np.sqrt(np.diff(t))[:, None] * z
        logs = _running_sum(loglam, inc)
        lams = np.exp(logs)
        cums = _running_sum(cum, 0.5 * np.diff(t)[:, None] * (lams[1:] + lams[:-1]))
        yield t, lams, cums
        loglam, cum = logs[-1], cums[-1]


def simulate_hazard_paths(model: SfmModel, cfg: SimConfig,
                          horizon: float | None = None) -> HazardEnsemble:
    horizon = model.horizon if horizon is None else horizon
    if horizon > model.horizon + 1e-9:
        raise ValueError("horizon exceeds the model's drift curve")
    rec = record_grid(horizon, cfg.record_step)
    haz = np.empty((cfg.n_paths, rec.size))
    cum = np.empty((cfg.n_paths, rec.size))
    clock = np.empty(cfg.n_paths)
    for b in range(_n_blocks(cfg)):
        lo = b * cfg.block_size
        hi = lo + _block_width(cfg, b)
        haz[lo:hi, 0] = model.lam0
        cum[lo:hi, 0] = 0.0
        for i, (_, lams, cums) in enumerate(path_chunks(model, cfg, b, horizon), start=1):
            haz[lo:hi, i] = lams[-1]
            cum[lo:hi, i] = cums[-1]
        clock[lo:hi] = _rng(cfg.seed, b, DEATH_STREAM).standard_exponential(hi - lo)
    return HazardEnsemble(model, cfg, horizon, rec, haz, cum, clock)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    mean = float(np.mean(x))
    if n < 2:
        return mean, 0.0
    with np.errstate(invalid="ignore"):  # infinite utilities give a nan spread
        return mean, float(np.std(x, ddof=1) / math.sqrt(n))


def _ens_mean_se(ens: HazardEnsemble, x: np.ndarray) -> tuple[float, float]:
    """Mean and standard error over paths; antithetic partners are averaged first."""
    if not ens.cfg.antithetic:
        return _mean_se(x)
    pairs = []
    for b in range(_n_blocks(ens.cfg)):
        lo = b * ens.cfg.block_size
        h = _block_width(ens.cfg, b) // 2
        pairs.append(0.5 * (x[lo:lo + h] + x[lo + h:lo + 2 * h]))
    return _mean_se(np.concatenate(pairs))


def estimate_survival(ens: HazardEnsemble, t: float, bernoulli: bool = False) -> tuple[float, float]:
    """Mean of ``exp(-int_0^t lam)`` over paths, or of the alive indicator when ``bernoulli``."""
    if t > ens.horizon + 1e-9:
        raise ValueError("t beyond the simulated horizon")
    i = ens.record_index(t)
    if bernoulli:
        x = (ens.cum_hazard[:, i] < ens.death_clock).astype(float)
    else:
        x = np.exp(-ens.cum_hazard[:, i])
    return _ens_mean_se(ens, x)


def _policy_beta(policy: PolicySurface, t: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Vectorized bilinear ``beta`` for a chunk: ``t`` shape (m,), ``lam`` shape (m, n)."""
    times = policy.times
    tt = np.clip(t, 0.0, policy.horizon)
    k = np.clip(np.searchsorted(times, tt, side="right") - 1, 0, times.size - 2)
    w = np.clip((tt - times[k]) / (times[k + 1] - times[k]), 0.0, 1.0)[:, None]
    logl = np.log(lam)
    grid = policy.grid
    n = grid.size
    table = policy.beta.ravel()

    def at(kk):
        pos = (logl - policy.shifts[kk][:, None] - grid.y[0]) / grid.dx
        pos = np.clip(pos, 0.0, n - 1.0)
        j = np.minimum(pos.astype(np.intp), n - 2)
        f = pos - j
        flat = j + (kk * n)[:, None]
        return (1 - f) * np.take(table, flat) + f * np.take(table, flat + 1)

    return (1 - w) * at(k) + w * at(k + 1)


@dataclass(frozen=True)
class PolicyValue:
    scale: float
    mean: float
    stderr: float
    min_wealth: float  # over t < T on every path
    per_path: np.ndarray

    @property
    def wealth_positive(self) -> bool:
        return self.min_wealth > 0


def _log_utility_value(log_c, gamma):
    if gamma == 1.0:
        return log_c
    with np.errstate(over="ignore"):
        return np.exp((1.0 - gamma) * log_c) / (1.0 - gamma)


def _inverse_beta_integral(b0, b1, u):
    """``int_0^u dt / beta`` for ``beta`` linear from ``b0`` to ``b1``."""
    x = (b1 - b0) / b0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.abs(x) < 1e-8, 1.0 - 0.5 * x, np.log1p(x) / np.where(x == 0, 1.0, x))
    return u / b0 * ratio


def _policy_values(ens: HazardEnsemble, policy: PolicySurface, econ: EconParams, scales):
    if abs(econ.rho - econ.r) > 1e-15 or econ.pi0 != 0:
        raise ValueError("policy valuation requires rho == r and pi0 == 0")
    T = min(econ.horizon, policy.horizon)
    if T > ens.horizon + 1e-9:
        raise ValueError("policy horizon exceeds the simulated horizon")
    scales = np.asarray(scales, dtype=float)
    g, r = econ.gamma, econ.r
    total = np.zeros((scales.size, ens.n_paths))
    min_f = np.full(scales.size, np.inf)
    for b, chunks in ens.blocks():
        lo = b * ens.cfg.block_size
        width = _block_width(ens.cfg, b)
        log_f = np.full((scales.size, width), math.log(econ.F0))
        acc = np.zeros((scales.size, width))
        for t, lam, cum in chunks:
            if t[0] >= T - 1e-12:
                break
            keep = t <= T + 1e-12
            t, lam, cum = t[keep], lam[keep], cum[keep]
            u = np.diff(t)[:, None]
            beta = _policy_beta(policy, t, lam)
            b0, b1 = beta[:-1], beta[1:]
            b_mid = 0.5 * (b0 + b1)
            # wealth is exact for c = s F / beta with beta linear over each step
            with np.errstate(divide="ignore"):
                l_end = _inverse_beta_integral(b0, b1, u)
                l_mid = _inverse_beta_integral(b0, b_mid, 0.5 * u)
                log_bmid = np.log(b_mid)
            log_disc = -r * (t[:-1, None] + 0.5 * u) - 0.5 * (cum[:-1] + cum[1:])
            interior = t[1:] < T - 1e-12
            for i, s in enumerate(scales):
                with np.errstate(invalid="ignore"):
                    step = r * u - s * l_end
                start = _running_sum(log_f[i], step[:-1])
                log_fmid = start + 0.5 * r * u - s * l_mid
                with np.errstate(divide="ignore"):
                    log_c = math.log(s) + log_fmid - log_bmid if s > 0 else np.full_like(log_fmid, -np.inf)
                acc[i] += np.sum(u * np.exp(log_disc) * _log_utility_value(log_c, g), axis=0)
                ends = start + step
                log_f[i] = ends[-1]
                if interior.any():
                    min_f[i] = min(min_f[i], float(np.exp(ends[interior].min())))
        total[:, lo:lo + width] = acc
    return total, min_f


def estimate_policy_value(ens: HazardEnsemble, policy: PolicySurface, econ: EconParams,
                          scale: float = 1.0) -> PolicyValue:
    """Expected discounted utility of consuming ``scale * F / beta(t, lam)``.

    Wealth is advanced exactly for ``beta`` linear in time over each
    simulation step; the utility integral uses the midpoint rule.
    """
    vals, min_f = _policy_values(ens, policy, econ, [scale])
    mean, se = _ens_mean_se(ens, vals[0])
    return PolicyValue(scale, mean, se, float(min_f[0]), vals[0])


@dataclass(frozen=True)
class PerturbationResult:
    scale: float
    diff_mean: float  # candidate minus perturbed
    diff_stderr: float

    @property
    def z(self) -> float:
        if self.diff_stderr == 0:
            return math.inf if self.diff_mean > 0 else -math.inf
        return self.diff_mean / self.diff_stderr

    def superior(self, z_crit: float = 2.326) -> bool:
        return self.z > z_crit


def compare_policies(ens: HazardEnsemble, policy: PolicySurface, econ: EconParams,
                     scales=(0.95, 1.05)):
    """Paired comparison of the candidate policy against scaled consumption on common paths."""
    vals, min_f = _policy_values(ens, policy, econ, [1.0, *scales])
    base = PolicyValue(1.0, *_ens_mean_se(ens, vals[0]), float(min_f[0]), vals[0])
    out = []
    for i, s in enumerate(scales, start=1):
        m, se = _ens_mean_se(ens, vals[0] - vals[i])
        out.append(PerturbationResult(float(s), m, se))
    return base, out


def forward_annuity_mc(ens: HazardEnsemble, r: float, t: float, T: float,
                       given_survival: bool = False) -> tuple[float, float]:
    """Simulated ``int_t^T e^{-rs} E[p(t, s, lam(t))] ds`` and its standard error.

    With ``given_survival`` paths are weighted by ``exp(-int_0^t lam)`` (ratio
    estimator, delta-method error).
    """
    if not 0 <= t <= T <= ens.horizon + 1e-9:
        raise ValueError("need 0 <= t <= T <= horizon")
    i_t = ens.record_index(t)
    ann = np.zeros(ens.n_paths)
    for b, chunks in ens.blocks():
        lo = b * ens.cfg.block_size
        width = _block_width(ens.cfg, b)
        base = ens.cum_hazard[lo:lo + width, i_t]
        acc = np.zeros(width)
        for ts, _, cum in chunks:
            if ts[-1] <= t + 1e-12:
                continue
            if ts[0] >= T - 1e-12:
                break
            keep = ts <= T + 1e-12
            ts, cum = ts[keep], cum[keep]
            f = np.exp(-r * ts)[:, None] * np.exp(-(cum - base))
            acc += np.sum(0.5 * np.diff(ts)[:, None] * (f[1:] + f[:-1]), axis=0)
        ann[lo:lo + width] = acc
    wts = np.exp(-ens.cum_hazard[:, i_t])
    if not given_survival:
        return _ens_mean_se(ens, ann)
    wbar = wts.mean()
    est = float(np.sum(wts * ann) / np.sum(wts))
    resid = wts * (ann - est) / wbar
    return est, float(np.std(resid, ddof=1) / math.sqrt(ann.size))


@dataclass(frozen=True)
class McRow:
    quantity: str
    t: float
    estimate: float
    stderr: float
    target: float

    @property
    def z_score(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.estimate == self.target else math.copysign(math.inf, self.estimate - self.target)
        return (self.estimate - self.target) / self.stderr


def write_mc_report(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "t", "estimate", "stderr", "target", "z_score"])
        for row in rows:
            w.writerow([row.quantity, f"{row.t:g}", f"{row.estimate:.10g}", f"{row.stderr:.4g}",
                        f"{row.target:.10g}", f"{row.z_score:.4f}"])
