"""Command-line front end: ``lifecycle table1|dfm|calibrate|table2|verify``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 a numerical
tolerance was breached, 4 an I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .calibration import CalibrationError, calibrate
from .config import ConfigError, RunConfig
from .dfm import EconParams, iwr_dfm, write_path_csv
from .hjb import (GAMMA_ONE_TOL, compare_theorem1, solve_policy, withdrawal_table,
                  write_theorem1_csv)
from .kernels import BACKEND
from .montecarlo import (McRow, compare_policies, estimate_survival, simulate_hazard_paths,
                         write_mc_report)
from .mortality import conditional_survival, hazard, survival

log = logging.getLogger("lifecycle")

EXIT_OK, EXIT_CONFIG, EXIT_TOLERANCE, EXIT_IO = 0, 2, 3, 4

TABLE1_AGES = (65, 70, 75, 80, 85, 90, 95, 100)
# survival from age x (column) to age y (row), lower triangle
TABLE1_SURVIVAL = {
    70: (0.9479, 1.000),
    75: (0.8659, 0.9135, 1.000),
    80: (0.7429, 0.7837, 0.8580, 1.000),
    85: (0.5733, 0.6047, 0.6620, 0.7716, 1.000),
    90: (0.3696, 0.3899, 0.4268, 0.4975, 0.6447, 1.000),
    95: (0.1758, 0.1855, 0.2031, 0.2367, 0.3067, 0.4757, 1.000),
    100: (0.0500, 0.0527, 0.0577, 0.0673, 0.0872, 0.1353, 0.2844, 1.000),
}
TABLE1_SURVIVAL[65] = (1.000,)
TABLE1_HAZARD = (0.0081, 0.0137, 0.0232, 0.0394, 0.0667, 0.1129, 0.1911, 0.3234)
TABLE1_TOL = 1e-4

TABLE2_PERCENT = {
    0.0: (7.59, 6.12, 5.58, 5.02, 4.78, 4.61),
    0.15: (7.52, 6.12, 5.60, 5.04, 4.80, 4.62),
    0.25: (7.44, 6.12, 5.62, 5.06, 4.82, 4.63),
}
TABLE2_GAMMAS = (0.5, 1.0, 1.5, 3.0, 5.0, 10.0)


def _write_manifest(out: Path, command: str, cfg: RunConfig):
    lines = [
        f"command = {command}",
        f"version = {__version__}",
        f"kernel_backend = {BACKEND}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"scipy = {scipy.__version__}",
        "",
        cfg.dumps(),
    ]
    (out / "run_manifest.txt").write_text("\n".join(lines))


def _sigma_tag(sigma: float) -> str:
    return f"{sigma:g}".replace(".", "p")


def table1_matrix(params):
    """Rows ``(to_age, [p per column age or None])`` plus the hazard row."""
    x0 = params.x
    rows = []
    for y in TABLE1_AGES:
        cells = []
        for x in TABLE1_AGES:
            cells.append(float(conditional_survival(params, x - x0, y - x0)) if x <= y else None)
        rows.append((y, cells))
    lam = [float(hazard(params, x - x0)) for x in TABLE1_AGES]
    return rows, lam


def cmd_table1(cfg: RunConfig, out: Path) -> int:
    params = cfg.gompertz
    rows, lam = table1_matrix(params)
    with open(out / "table1.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["to_age"] + [f"x={x}" for x in TABLE1_AGES])
        for y, cells in rows:
            w.writerow([y] + ["" if c is None else f"{c:.4f}" for c in cells])
        w.writerow(["lambda"] + [f"{v:.4f}" for v in lam])
    failures = []
    for y, cells in rows:
        for x, c, ref in zip(TABLE1_AGES, cells, TABLE1_SURVIVAL[y]):
            if abs(c - ref) > TABLE1_TOL:
                failures.append(f"survival x={x} to age {y}: got {c:.6f}, expected {ref:.4f}")
    for x, v, ref in zip(TABLE1_AGES, lam, TABLE1_HAZARD):
        if abs(v - ref) > TABLE1_TOL:
            failures.append(f"hazard x={x}: got {v:.6f}, expected {ref:.4f}")
    n = sum(len(v) for v in TABLE1_SURVIVAL.values()) + len(TABLE1_HAZARD)
    if failures:
        print(f"table1: {len(failures)} of {n} cells outside +/-{TABLE1_TOL:g}")
        for f in failures:
            print("  " + f)
        return EXIT_TOLERANCE
    print(f"table1: all {n} cells within +/-{TABLE1_TOL:g}")
    return EXIT_OK


def cmd_dfm(cfg: RunConfig, out: Path) -> int:
    for g in cfg.econ.gammas:
        econ = cfg.econ.econ(g)
        cp = write_path_csv(out / f"dfm_path_gamma{g:g}.csv", econ, cfg.gompertz,
                            cfg.econ.path_step)
        print(f"gamma={g:g} r={econ.r:g} rho={econ.rho:g} F0={econ.F0:g}: "
              f"c*(0)={cp.c0:.3f} (IWR {100 * cp.c0 / econ.F0:.4f}%)")
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig, out: Path) -> int:
    sec = cfg.calibration
    results = {}
    status = EXIT_OK
    for s in sec.sigmas:
        res = calibrate(cfg.gompertz, s, cfg.solver, sec.horizon)
        results[s] = res
        tag = _sigma_tag(s)
        res.write_mu_csv(out / f"mu_curve_sigma{tag}.csv", sec.report_every)
        res.write_report_csv(out / f"calibration_report_sigma{tag}.csv", sec.report_every)
        ok = res.max_abs_err < cfg.solver.survival_tol
        print(f"sigma={s:g}: max survival error {res.max_abs_err:.3e} "
              f"({'ok' if ok else 'FAIL'}), mu(0)={res.drift.mu[0]:.6f}")
        if not ok:
            status = EXIT_TOLERANCE
    ordered = sorted(results)
    with open(out / "calibration_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sigma", "max_abs_err", "mu0", "mu_ordering_vs_previous", "min_mu_gap"])
        prev = None
        for s in ordered:
            res = results[s]
            if prev is None:
                verdict, gap = "", ""
            else:
                d = res.drift.mu - results[prev].drift.mu
                gap = f"{d.min():.3e}"
                verdict = "ok" if d.min() >= -1e-9 else "FAIL"
                print(f"mu(t; {s:g}) >= mu(t; {prev:g}) pointwise: {verdict} (min gap {d.min():.3e})")
                if verdict == "FAIL":
                    status = EXIT_TOLERANCE
            w.writerow([f"{s:g}", f"{res.max_abs_err:.3e}", f"{res.drift.mu[0]:.10f}", verdict, gap])
            prev = s
    return status


def _write_surfaces(cfg: RunConfig, out: Path):
    """One ``policy_surface_sigma*_gamma*.csv`` per cell, thinned to the stored time slices."""
    sec = cfg.table2
    for s in sec.sigmas:
        model = calibrate(cfg.gompertz, s, cfg.solver, sec.horizon).model
        for g in sec.gammas:
            econ = EconParams(r=sec.r, rho=sec.r, gamma=g, horizon=sec.horizon)
            surface = solve_policy(model, econ, cfg.solver)
            surface.write_csv(out / f"policy_surface_sigma{_sigma_tag(s)}_gamma{_sigma_tag(g)}.csv")


def cmd_table2(cfg: RunConfig, out: Path) -> int:
    sec = cfg.table2
    table = withdrawal_table(cfg.gompertz, sec.sigmas, sec.gammas, sec.r, sec.horizon,
                             cfg.solver, sec.workers)
    table.write_csv(out / "table2.csv")
    table.write_csv(out / "table2_raw.csv", raw=True)
    write_theorem1_csv(out / "theorem1_report.csv", table.ordering_rows(cfg.gompertz))
    if sec.surfaces:
        _write_surfaces(cfg, out)
    pct = table.percent()
    failures = []
    for i, s in enumerate(sec.sigmas):
        print(f"sigma={s:<5g} " + " ".join(f"{v:6.2f}%" for v in pct[i]))
        ref = TABLE2_PERCENT.get(s)
        for j, g in enumerate(sec.gammas):
            if ref is None or g not in TABLE2_GAMMAS:
                continue
            want = ref[TABLE2_GAMMAS.index(g)]
            if abs(pct[i, j] - want) > sec.tolerance_pp:
                failures.append(f"sigma={s:g} gamma={g:g}: {pct[i, j]:.4f}% vs {want:.2f}% "
                                f"(diff {pct[i, j] - want:+.4f}pp)")
    if failures:
        print(f"table2: {len(failures)} cell(s) outside +/-{sec.tolerance_pp:g}pp")
        for f in failures:
            print("  " + f)
        return EXIT_TOLERANCE
    print(f"table2: all compared cells within +/-{sec.tolerance_pp:g}pp")
    return EXIT_OK


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def run_verification(cfg: RunConfig) -> tuple[list[Check], list[McRow]]:
    """Property suite: ordering, deterministic equivalence, survival matching, optimality."""
    v, t2, params = cfg.verify, cfg.table2, cfg.gompertz
    checks = []
    models = {}
    for s in sorted(set(v.sigmas) | {v.mc_sigma}):
        res = calibrate(params, s, cfg.solver, cfg.calibration.horizon)
        models[s] = res.model
        ok = res.max_abs_err < cfg.solver.survival_tol
        checks.append(Check(f"calibration_survival sigma={s:g}", ok,
                            f"max |q0 - p| = {res.max_abs_err:.3e}"))

    for s in v.sigmas:
        for row in compare_theorem1(params, s, v.gammas, t2.r, t2.horizon, cfg.solver,
                                    model=models[s]):
            if abs(row.gamma - 1) <= GAMMA_ONE_TOL:
                ok = abs(row.diff) * 100 < v.gamma_one_tol_pp
                name = f"log_utility_equality sigma={s:g}"
            else:
                ok = row.ordering_ok()
                name = f"theorem_ordering sigma={s:g} gamma={row.gamma:g}"
            checks.append(Check(name, ok, f"sfm {100 * row.c_sfm:.4f}% dfm {100 * row.c_dfm:.4f}% "
                                          f"diff {100 * row.diff:+.4f}pp"))

    det = calibrate(params, 0.0, cfg.solver, t2.horizon).model
    for g in v.equivalence_gammas:
        econ = EconParams(r=t2.r, rho=t2.r, gamma=g, horizon=t2.horizon)
        pde = solve_policy(det, econ, cfg.solver).withdrawal_rate()
        ref = iwr_dfm(econ, params)
        gap = 100 * abs(pde - ref)
        checks.append(Check(f"deterministic_equivalence gamma={g:g}", gap < v.equivalence_tol_pp,
                            f"pde {100 * pde:.5f}% closed form {100 * ref:.5f}% gap {gap:.2e}pp"))

    model = models[v.mc_sigma]
    horizon = max(max(v.survival_times), t2.horizon)
    ens = simulate_hazard_paths(model, cfg.mc, horizon)
    rows = []
    for t in v.survival_times:
        est, se = estimate_survival(ens, t)
        row = McRow("survival", t, est, se, float(survival(params, t)))
        rows.append(row)
        checks.append(Check(f"mc_survival sigma={v.mc_sigma:g} t={t:g}", abs(row.z_score) <= v.z_survival,
                            f"{est:.5f} +/- {se:.5f} vs {row.target:.5f} (z={row.z_score:+.2f})"))
    for g in v.policy_gammas:
        econ = EconParams(r=t2.r, rho=t2.r, gamma=g, horizon=t2.horizon)
        policy = solve_policy(model, econ, cfg.solver)
        base, perturbed = compare_policies(ens, policy, econ, (0.95, 1.05))
        rows.append(McRow(f"policy_value_gamma{g:g}", t2.horizon, base.mean, base.stderr, float("nan")))
        for p in perturbed:
            rows.append(McRow(f"value_gain_vs_scale{p.scale:g}_gamma{g:g}", t2.horizon,
                              p.diff_mean, p.diff_stderr, 0.0))
            checks.append(Check(f"mc_policy_superior gamma={g:g} scale={p.scale:g}",
                                p.superior(v.z_policy), f"gain {p.diff_mean:.4g} (z={p.z:.1f})"))
        checks.append(Check(f"mc_wealth_positive gamma={g:g}", base.wealth_positive,
                            f"min wealth before horizon {base.min_wealth:.3g}"))
    return checks, rows


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    checks, rows = run_verification(cfg)
    write_mc_report(out / "mc_report.csv", rows)
    with open(out / "verify_report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["property", "status", "detail"])
        for c in checks:
            w.writerow([c.name, "pass" if c.passed else "fail", c.detail])
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    failed = sum(not c.passed for c in checks)
    print(f"verify: {len(checks) - failed} passed, {failed} failed")
    return EXIT_TOLERANCE if failed else EXIT_OK


COMMANDS = {
    "table1": cmd_table1,
    "dfm": cmd_dfm,
    "calibrate": cmd_calibrate,
    "table2": cmd_table2,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lifecycle", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="run configuration file (defaults built in)")
    ap.add_argument("--out", type=Path, required=True, help="output directory")
    ap.add_argument("--seed", type=int, help="override the Monte Carlo seed")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read configuration: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        _write_manifest(args.out, args.command, cfg)
        return COMMANDS[args.command](cfg, args.out)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (CalibrationError, ArithmeticError) as exc:
        print(f"{args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except ValueError as exc:
        print(f"{args.command}: invalid parameters: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
