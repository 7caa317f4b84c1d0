"""The marching kernels, checked against dense linear algebra and across backends."""

import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st
from hypothesis.extra.numpy import arrays

from lifecycle import kernels
from lifecycle import _kernels_py as pyk
from lifecycle.grid import LogHazardGrid, SolverSettings, time_grid
from lifecycle.mortality import GompertzParams, survival_curve_of

BACKENDS = kernels.backends()
needs_compiled = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernels not built")


def _laplacian(n, dx):
    L = np.zeros((n, n))
    for i in range(n):
        if i > 0:
            L[i, i - 1] = 1
            L[i, i] -= 1
        if i < n - 1:
            L[i, i + 1] = 1
            L[i, i] -= 1
    return L / dx ** 2


@hsettings(max_examples=50, deadline=None)
@given(n=st.integers(3, 30), data=st.data())
def test_tridiag_solve_against_dense(n, data):
    rnd = np.random.default_rng(data.draw(st.integers(0, 2 ** 32 - 1)))
    lower, upper = rnd.uniform(-1, 1, n), rnd.uniform(-1, 1, n)
    diag = 3.0 + rnd.uniform(0, 1, n)  # diagonally dominant
    rhs = rnd.normal(size=n)
    A = np.diag(diag) + np.diag(lower[1:], -1) + np.diag(upper[:-1], 1)
    for mod in BACKENDS.values():
        x = mod.tridiag_solve(lower, diag, upper, rhs)
        assert np.allclose(A @ x, rhs, atol=1e-12)


@pytest.mark.parametrize("compact", [False, True])
def test_lattice_diffusion_exact_on_exponential(compact):
    # the discrete generator applied to e^y reproduces sigma^2/2 e^y
    sigma, dx = 0.2, 0.05
    d = pyk.lattice_diffusion(sigma, dx, compact)
    y = np.arange(-5, 6) * dx
    f = np.exp(y)
    d2 = (f[2:] - 2 * f[1:-1] + f[:-2]) / dx ** 2
    if compact:
        # (I + d2/12)^-1 applied: invert by multiplying the relation
        lhs = d * d2
        rhs = 0.5 * sigma ** 2 * (f[1:-1] + (f[2:] - 2 * f[1:-1] + f[:-2]) / 12)
    else:
        lhs, rhs = d * d2, 0.5 * sigma ** 2 * f[1:-1]
    assert np.allclose(lhs, rhs, rtol=1e-13)
    assert pyk.lattice_diffusion(sigma, 0.0) == 0.5 * sigma ** 2


def test_forward_step_pure_diffusion_matches_crank_nicolson():
    n, dx, h, D = 40, 0.1, 0.01, 0.03
    y = np.linspace(-200, -200 + (n - 1) * dx, n)  # hazards ~ 0: no killing
    q = np.exp(-((np.arange(n) - 20) * dx) ** 2 / 0.1)
    L = _laplacian(n, dx)
    I = np.eye(n)
    ref = np.linalg.solve(I - 0.5 * h * D * L, (I + 0.5 * h * D * L) @ q)
    for mod in BACKENDS.values():
        out, shift = mod.forward_step(q, y, 0.0, 0.1, h, D, dx)
        assert np.allclose(out, ref, rtol=1e-12, atol=1e-14)
        assert shift == pytest.approx(0.1 * h)


def test_forward_step_compact_matches_dense():
    n, dx, h, D = 40, 0.1, 0.01, 0.03
    y = np.linspace(-200, -200 + (n - 1) * dx, n)
    q = np.exp(-((np.arange(n) - 20) * dx) ** 2 / 0.1)
    d2 = _laplacian(n, 1.0)
    a = 0.5 * h * D / dx ** 2
    M = np.eye(n) + d2 / 12
    ref = np.linalg.solve(M - a * d2, (M + a * d2) @ q)
    for mod in BACKENDS.values():
        out, _ = mod.forward_step(q, y, 0.0, 0.0, h, D, dx, True)
        assert np.allclose(out, ref, rtol=1e-12, atol=1e-14)


@hsettings(max_examples=40, deadline=None)
@given(q=arrays(np.float64, 25, elements=st.floats(0, 10)), compact=st.booleans())
def test_diffusion_conserves_mass_and_positivity(q, compact):
    y = np.full(25, -300.0) + np.arange(25) * 0.1
    for mod in BACKENDS.values():
        out, _ = mod.forward_step(q, y, 0.0, 0.0, 0.004, 0.01, 0.1, compact)
        assert out.sum() == pytest.approx(q.sum(), rel=1e-12, abs=1e-12)
        if not compact:
            # an M-matrix step; the compact one is not, hence it waits for a resolved density
            assert out.min() >= -1e-12 * max(1.0, q.max())


def test_compact_step_positive_once_resolved():
    n, dx = 60, 0.1
    y = np.full(n, -300.0) + np.arange(n) * dx
    q = np.exp(-0.5 * ((np.arange(n) - 30) / 3.0) ** 2)  # spread over three cells
    for mod in BACKENDS.values():
        out, _ = mod.forward_step(q, y, 0.0, 0.0, 0.004, 0.01, dx, True)
        assert out.min() >= 0.0


def test_killing_without_diffusion_is_exact():
    y = np.log(np.array([0.01, 0.1, 1.0]))
    q = np.ones(3)
    v, h = 0.1, 0.5
    # int_0^h lam e^{v s} ds = lam (e^{vh} - 1)/v
    want = np.exp(-np.exp(y) * math.expm1(v * h) / v)
    for mod in BACKENDS.values():
        out, _ = mod.forward_step(q, y, 0.0, v, h, 0.0, 0.1)
        assert np.allclose(out, want, rtol=1e-14)


def _problem(sigma=0.15, horizon=10.0):
    s = SolverSettings()
    p = GompertzParams()
    times = time_grid(horizon, s)
    grid = LogHazardGrid.build(p.lam0, sigma, horizon, s)
    hz = np.asarray(survival_curve_of(p, horizon).hazard(times))
    q0 = np.zeros(grid.size)
    q0[grid.center] = 1 / grid.dx
    return s, p, times, grid, hz, q0


@needs_compiled
def test_backends_agree_on_calibration_march():
    s, p, times, grid, hz, q0 = _problem()
    switch = s.compact_from(0.15, grid.dx)
    outs = [mod.calibrate_march(q0, grid.y, grid.dx, times, 0.0, p.eta, 0.15, hz, 1e-12, 12,
                                [365, 730], switch) for mod in BACKENDS.values()]
    for key in ("velocity", "shifts", "mass", "m1", "m2", "snapshots"):
        assert np.allclose(outs[0][key], outs[1][key], rtol=1e-10, atol=1e-13), key
    assert outs[0]["negative_count"] == outs[1]["negative_count"]


@needs_compiled
def test_backends_agree_on_survival_and_policy():
    s, p, times, grid, hz, q0 = _problem()
    shifts = np.log(hz / p.lam0)
    surv = [mod.survival_march(q0, grid.y, grid.dx, times, shifts, 1, times.size - 1, 0.15, 2.0)
            for mod in BACKENDS.values()]
    assert np.allclose(surv[0][0], surv[1][0], rtol=1e-11)
    assert np.allclose(surv[0][1], surv[1][1], rtol=1e-10, atol=1e-13)
    pol = [mod.hjb_march(grid.y, grid.dx, times, shifts, times.size - 1, 0.15, 3.0, 0.02, [0, 100])
           for mod in BACKENDS.values()]
    assert np.allclose(pol[0][0], pol[1][0], rtol=1e-11)
    assert np.allclose(pol[0][1], pol[1][1], rtol=1e-11)


def test_extinction_is_reported():
    s, p, times, grid, hz, q0 = _problem(horizon=2.0)
    for mod in BACKENDS.values():
        with pytest.raises(ArithmeticError):
            mod.calibrate_march(np.zeros_like(q0), grid.y, grid.dx, times, 0.0, p.eta, 0.15,
                                hz, 1e-12, 12, [], math.inf)


def test_hjb_deterministic_terminal_and_positive():
    s, p, times, grid, hz, q0 = _problem(sigma=0.0)
    shifts = np.log(hz / p.lam0)
    for mod in BACKENDS.values():
        beta, stored, neg = mod.hjb_march(grid.y, grid.dx, times, shifts, times.size - 1,
                                          0.0, 2.0, 0.02, [times.size - 1])
        assert neg == 0
        assert np.all(stored[0] == 0.0)
        assert np.all(beta > 0)
        # larger hazard => shorter effective horizon => smaller wealth/consumption ratio
        assert np.all(np.diff(beta) <= 1e-12)


def test_backend_selection_exposes_same_api():
    assert kernels.BACKEND in BACKENDS
    for mod in BACKENDS.values():
        for name in ("tridiag_solve", "forward_step", "moments", "lattice_diffusion",
                     "calibrate_march", "survival_march", "hjb_march", "ExtinctionError"):
            assert hasattr(mod, name)


def test_pure_python_fallback_selected_by_environment():
    import os
    import subprocess
    import sys
    env = dict(os.environ, LIFECYCLE_PURE_PYTHON="1")
    code = ("import lifecycle, lifecycle.kernels as k; "
            "print(lifecycle.BACKEND, k.hjb_march.__module__)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    assert out == ["python", "lifecycle._kernels_py"]
