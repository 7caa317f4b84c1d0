"""Shared solver geometry: the time grid and the moving log-hazard grid.

Both PDE solvers work in ``y = ln(lambda) - S(t)`` where ``S(t)`` is the
integrated log-drift ``int_0^t (mu(s) - sigma^2/2) ds``.  In that frame the
advection term vanishes and only diffusion and the hazard-dependent
reaction remain, so a grid node follows a deterministic hazard path.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np


@dataclass(frozen=True)
class SolverSettings:
    nodes: int = 400
    dt: float = 1.0 / 365.0
    t0: float = 1e-3
    lower_width: float = 8.0  # multiples of sigma*sqrt(D) below ln(lambda0)
    upper_width: float = 6.0
    pad: float = 1.0
    store_every: int = 7
    history_every: int = 365
    newton_tol: float = 1e-12
    newton_max_iter: int = 12
    survival_tol: float = 1e-3
    compact_cells: float = 3.0  # fourth-order diffusion once the spread reaches this many cells; 0 disables

    def __post_init__(self):
        if self.nodes < 3:
            raise ValueError("nodes must be >= 3")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.t0 < self.dt:
            raise ValueError("t0 must satisfy 0 < t0 < dt")
        if self.store_every < 1 or self.history_every < 1:
            raise ValueError("storage strides must be >= 1")
        if self.compact_cells < 0:
            raise ValueError("compact_cells must be non-negative")

    def compact_from(self, sigma: float, dx: float, start: float = 0.0) -> float:
        """Time after which a density released at ``start`` is smooth enough for the compact scheme."""
        if self.compact_cells <= 0 or sigma <= 0:
            return float("inf")
        return start + (self.compact_cells * dx / sigma) ** 2

    def refined(self, factor: int = 2) -> "SolverSettings":
        """Same settings with ``dt`` divided and the node count multiplied by ``factor``."""
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw["dt"] = self.dt / factor
        kw["t0"] = min(self.t0, kw["dt"] / 2)
        kw["nodes"] = (self.nodes - 1) * factor + 1
        kw["store_every"] = self.store_every * factor
        kw["history_every"] = self.history_every * factor
        return SolverSettings(**kw)


def time_grid(horizon: float, settings: SolverSettings) -> np.ndarray:
    """Nodes ``0, t0, dt, 2dt, ..., horizon``."""
    if horizon <= settings.dt:
        raise ValueError("horizon must exceed dt")
    k = int(round(horizon / settings.dt))
    steps = np.arange(1, k + 1) * settings.dt
    if abs(steps[-1] - horizon) > 1e-9 * max(1.0, horizon):
        steps = steps[steps < horizon - 1e-12]
        steps = np.append(steps, horizon)
    else:
        steps[-1] = horizon
    return np.concatenate(([0.0, settings.t0], steps))


def node_index(times: np.ndarray, t: float, tol: float | None = None) -> int:
    """Index of the time node closest to ``t``; raises if none lies within ``tol``."""
    i = int(np.argmin(np.abs(times - t)))
    if tol is None:
        tol = 1e-9 * max(1.0, abs(t))
    if abs(times[i] - t) > tol:
        raise ValueError(f"t={t} is not a solver time node (nearest {times[i]})")
    return i


@dataclass(frozen=True)
class LogHazardGrid:
    """Uniform grid in ``y``; node ``center`` sits exactly at ``ln(lambda0)``."""

    y: np.ndarray
    dx: float
    center: int

    @classmethod
    def build(cls, lam0: float, sigma: float, horizon: float,
              settings: SolverSettings) -> "LogHazardGrid":
        spread = sigma * np.sqrt(horizon)
        lo = settings.lower_width * spread + settings.pad
        hi = settings.upper_width * spread + settings.pad
        n = settings.nodes
        dx = (lo + hi) / (n - 1)
        center = int(round(lo / dx))
        y = np.log(lam0) + (np.arange(n) - center) * dx
        return cls(y=y, dx=dx, center=center)

    @property
    def size(self) -> int:
        return self.y.size

    def hazards(self, shift: float) -> np.ndarray:
        return np.exp(self.y + shift)

    def locate(self, lam: float, shift: float) -> tuple[int, float]:
        """Left bracketing node and linear weight of the right node for ``lam``."""
        pos = (np.log(lam) - shift - self.y[0]) / self.dx
        pos = min(max(pos, 0.0), self.size - 1.0)
        j = min(int(np.floor(pos)), self.size - 2)
        return j, pos - j
