"""Pure numpy implementation of the time-marching kernels.

Mirrors ``_ckernels.pyx`` operation for operation; used when the compiled
extension is unavailable or ``LIFECYCLE_PURE_PYTHON=1`` is set.
"""

import math

import numpy as np
from scipy.linalg import solve_banded

BETA_FLOOR = 1e-10


class ExtinctionError(ArithmeticError):
    pass


COMPACT = 1.0 / 12.0


def lattice_diffusion(sigma, dx, compact=False):
    """Diffusion coefficient for which the discrete Laplacian is exact on ``e^y``.

    ``compact`` selects the fourth-order operator ``(I + d2/12)^-1 d2 / dx^2``
    instead of the three-point one.
    """
    if dx <= 0:
        return 0.5 * sigma * sigma
    c = 4.0 * math.sinh(0.5 * dx) ** 2
    eig = c / (dx * dx)
    if compact:
        eig /= 1.0 + COMPACT * c
    return 0.5 * sigma * sigma / eig


def _neumann_apply(v, dx):
    out = np.empty_like(v)
    out[1:-1] = v[2:] - 2.0 * v[1:-1] + v[:-2]
    out[0] = v[1] - v[0]
    out[-1] = v[-2] - v[-1]
    return out / (dx * dx)


def _banded(n, off, diag_extra):
    # (I - off*L_neumann) + diag(diag_extra) where off = coef/dx^2 already scaled
    ab = np.empty((3, n))
    ab[0, :] = -off
    ab[2, :] = -off
    ab[1, :] = 1.0 + 2.0 * off
    ab[1, 0] = 1.0 + off
    ab[1, -1] = 1.0 + off
    ab[1, :] += diag_extra
    return ab


def tridiag_solve(lower, diag, upper, rhs):
    """Solve a tridiagonal system; ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = diag.size
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs)


def forward_step(q, y, shift, velocity, h, diffusion, dx, compact=False):
    """One Strang step: half killing, Crank-Nicolson diffusion, half killing.

    With ``compact`` the diffusion uses the fourth-order compact Laplacian,
    which stays tridiagonal: ``(M - a d2) q' = (M + a d2) q`` with ``M = I + d2/12``.
    """
    vh = velocity * h * 0.5
    if abs(vh) > 1e-12:
        e = np.exp(vh)
        f = np.expm1(vh) / velocity
    else:
        e = 1.0 + vh
        f = 0.5 * h * (1.0 + 0.5 * vh)
    lam = np.exp(y + shift)
    out = q * np.exp(-lam * f)
    if diffusion > 0.0:
        a = 0.5 * h * diffusion / (dx * dx)
        m = COMPACT if compact else 0.0
        rhs = out + (a + m) * _neumann_apply(out, 1.0)
        out = solve_banded((1, 1), _banded(q.size, a - m, 0.0), rhs)
    out *= np.exp(-lam * e * f)
    return out, shift + velocity * h


def moments(q, y, shift, dx):
    lam = np.exp(y + shift)
    w = q * dx
    return w.sum(), (lam * w).sum(), (lam * lam * w).sum()


def _clamp(q):
    neg = q < 0.0
    bad = int(np.count_nonzero(q < -1e-12))
    if neg.any():
        q[neg] = 0.0
    return bad


def calibrate_march(q, y, dx, times, shift0, v0, sigma, target_hazard,
                    tol, max_iter, snap_idx, compact_from=np.inf):
    """Advance the pseudo-density from node 1 to the last node.

    At every step the log-drift velocity is root-found so that the mean
    hazard of the surviving mass equals ``target_hazard`` at the step end.
    Steps starting at or after ``compact_from`` use the compact Laplacian.
    """
    n_nodes = times.size
    d_std = lattice_diffusion(sigma, dx)
    d_cmp = lattice_diffusion(sigma, dx, True)
    velocity = np.zeros(n_nodes - 1)
    shifts = np.zeros(n_nodes)
    mass = np.zeros(n_nodes)
    m1 = np.zeros(n_nodes)
    m2 = np.zeros(n_nodes)
    snaps = np.zeros((len(snap_idx), q.size))
    snap_pos = {int(k): i for i, k in enumerate(snap_idx)}
    q = np.array(q, dtype=float)
    shift = shift0
    shifts[1] = shift0
    v = v0
    max_res = 0.0
    max_used = 0
    negatives = 0
    for n in range(1, n_nodes):
        mass[n], m1[n], m2[n] = moments(q, y, shift, dx)
        if n in snap_pos:
            snaps[snap_pos[n]] = q
        if n == n_nodes - 1:
            break
        h = times[n + 1] - times[n]
        log_target = np.log(target_hazard[n + 1])
        compact = times[n] >= compact_from
        diffusion = d_cmp if compact else d_std

        def resid(vel):
            qn, sn = forward_step(q, y, shift, vel, h, diffusion, dx, compact)
            a0, a1, _ = moments(qn, y, sn, dx)
            if not (a0 > 0.0 and a1 > 0.0):
                raise ExtinctionError(f"pseudo-density extinct at t={times[n + 1]}")
            return np.log(a1 / a0) - log_target, qn, sn

        va = v
        fa, qa, sa = resid(va)
        used = 1
        if abs(fa) > tol:
            vb = va - fa / h
            fb, qb, sb = resid(vb)
            used += 1
            while abs(fb) > tol and used < max_iter and fb != fa:
                vc = vb - fb * (vb - va) / (fb - fa)
                va, fa = vb, fb
                vb = vc
                fb, qb, sb = resid(vb)
                used += 1
            va, fa, qa, sa = vb, fb, qb, sb
        max_res = max(max_res, abs(fa))
        max_used = max(max_used, used)
        v = va
        q, shift = qa, sa
        negatives += _clamp(q)
        velocity[n] = v
        shifts[n + 1] = shift
    return {
        "velocity": velocity, "shifts": shifts, "mass": mass, "m1": m1, "m2": m2,
        "snapshots": snaps, "q_final": q, "max_residual": max_res,
        "max_iterations": max_used, "negative_count": negatives,
    }


def survival_march(q, y, dx, times, shifts, n_start, n_end, sigma, compact_from=np.inf):
    """Zeroth moment at nodes ``n_start..n_end`` under a frozen drift, and the final density."""
    d_std = lattice_diffusion(sigma, dx)
    d_cmp = lattice_diffusion(sigma, dx, True)
    q = np.array(q, dtype=float)
    out = np.empty(n_end - n_start + 1)
    out[0] = q.sum() * dx
    for n in range(n_start, n_end):
        h = times[n + 1] - times[n]
        vel = (shifts[n + 1] - shifts[n]) / h
        compact = times[n] >= compact_from
        q, _ = forward_step(q, y, shifts[n], vel, h, d_cmp if compact else d_std, dx, compact)
        out[n - n_start + 1] = q.sum() * dx
    return out, q


def _nonlinear(beta, coef, dx):
    out = np.zeros_like(beta)
    g = (beta[2:] - beta[:-2]) / (2.0 * dx)
    out[1:-1] = coef * g * g / np.maximum(beta[1:-1], BETA_FLOOR)
    return out


def hjb_march(y, dx, times, shifts, n_end, sigma, gamma, r, store_idx):
    """March ``beta`` backward from ``beta(T)=0`` at node ``n_end`` to node 0.

    Implicit (Crank-Nicolson) in diffusion and reaction, lagged explicit in
    the gradient nonlinearity with one predictor-corrector pass.
    """
    n = y.size
    diffusion = lattice_diffusion(sigma, dx)
    coef = 0.5 * (gamma - 1.0) * sigma * sigma
    nonlinear = sigma > 0.0 and gamma != 1.0
    beta = np.zeros(n)
    stored = np.zeros((len(store_idx), n))
    store_pos = {int(k): i for i, k in enumerate(store_idx)}
    negatives = 0
    if n_end in store_pos:
        stored[store_pos[n_end]] = beta
    react_old = r + np.exp(y + shifts[n_end]) / gamma
    for k in range(n_end - 1, -1, -1):
        h = times[k + 1] - times[k]
        react_new = r + np.exp(y + shifts[k]) / gamma
        rhs = beta + 0.5 * h * (-react_old * beta + diffusion * _neumann_apply(beta, dx)) + h
        ab = _banded(n, 0.5 * h * diffusion / (dx * dx), 0.5 * h * react_new)
        if nonlinear:
            n1 = _nonlinear(beta, coef, dx)
            pred = solve_banded((1, 1), ab, rhs + h * n1)
            n2 = _nonlinear(np.maximum(pred, 0.0), coef, dx)
            beta = solve_banded((1, 1), ab, rhs + 0.5 * h * (n1 + n2))
        else:
            beta = solve_banded((1, 1), ab, rhs)
        negatives += _clamp(beta)
        react_old = react_new
        if k in store_pos:
            stored[store_pos[k]] = beta
    return beta, stored, negatives
