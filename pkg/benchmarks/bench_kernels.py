"""Compare the compiled and numpy kernel backends on the production workloads.

    python benchmarks/bench_kernels.py [--repeat 3]

For each kernel the best wall time over ``--repeat`` runs is reported together
with the largest absolute difference between the backends' outputs.
"""

import argparse
import time

import numpy as np

from lifecycle import GompertzParams, SolverSettings, calibrate
from lifecycle.calibration import init_density
from lifecycle.grid import LogHazardGrid, time_grid
from lifecycle.kernels import backends
from lifecycle.mortality import DriftCurve, SfmModel, survival_curve_of


def _best(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def workloads(sigma=0.15, horizon=55.0, settings=None):
    settings = settings or SolverSettings()
    params = GompertzParams()
    curve = survival_curve_of(params, horizon)
    times = time_grid(horizon, settings)
    grid = LogHazardGrid.build(params.lam0, sigma, horizon, settings)
    model = SfmModel(params.lam0, sigma, DriftCurve.constant(params.eta, sigma, horizon), horizon)
    q0 = init_density(model, float(times[1]), grid).values
    hz = np.asarray(curve.hazard(times))
    switch = settings.compact_from(sigma, grid.dx)
    shifts = calibrate(params, sigma, settings, horizon).drift.shift
    snaps = list(range(365, times.size, 365))

    def calib(k):
        return k.calibrate_march(q0, grid.y, grid.dx, times, 0.0, params.eta, sigma, hz,
                                 settings.newton_tol, settings.newton_max_iter, snaps, switch)["m1"]

    def surv(k):
        return k.survival_march(q0, grid.y, grid.dx, times, shifts, 1, times.size - 1,
                                sigma, switch)[0]

    def hjb(k):
        n30 = int(round(30.0 / settings.dt)) + 1
        return k.hjb_march(grid.y, grid.dx, times, shifts, n30, sigma, 3.0, 0.02, [0])[0]

    return {"calibrate_march": calib, "survival_march": surv, "hjb_march": hjb}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    impls = backends()
    if "cython" not in impls:
        print("compiled backend unavailable; timing numpy only")
    print(f"{'kernel':<16} " + " ".join(f"{name:>10}" for name in impls) + "   speedup   max|diff|")
    for name, fn in workloads().items():
        times, outs = {}, {}
        for bname, mod in impls.items():
            times[bname], outs[bname] = _best(lambda: fn(mod), args.repeat)
        cols = " ".join(f"{times[b]:9.3f}s" for b in impls)
        if "cython" in impls:
            speed = times["python"] / times["cython"]
            diff = float(np.max(np.abs(outs["python"] - outs["cython"])))
            print(f"{name:<16} {cols}   {speed:6.1f}x   {diff:.2e}")
        else:
            print(f"{name:<16} {cols}")


if __name__ == "__main__":
    main()
