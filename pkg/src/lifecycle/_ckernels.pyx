# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled time-marching kernels; see ``_kernels_py`` for the reference version."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, log, fabs, fmax, sinh

cnp.import_array()

cdef double BETA_FLOOR = 1e-10


cdef double COMPACT = 1.0 / 12.0


cpdef double lattice_diffusion(double sigma, double dx, bint compact=False):
    """Diffusion coefficient for which the discrete Laplacian is exact on ``e^y``."""
    cdef double c, eig
    if dx <= 0:
        return 0.5 * sigma * sigma
    c = 4.0 * sinh(0.5 * dx) ** 2
    eig = c / (dx * dx)
    if compact:
        eig /= 1.0 + COMPACT * c
    return 0.5 * sigma * sigma / eig


class ExtinctionError(ArithmeticError):
    pass


cdef void _thomas(double[::1] lower, double[::1] diag, double[::1] upper,
                  double[::1] rhs, double[::1] out, double[::1] work) noexcept nogil:
    cdef Py_ssize_t n = diag.shape[0], i
    cdef double m
    work[0] = upper[0] / diag[0]
    out[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i] * work[i - 1]
        if i < n - 1:
            work[i] = upper[i] / m
        out[i] = (rhs[i] - lower[i] * out[i - 1]) / m
    for i in range(n - 2, -1, -1):
        out[i] -= work[i] * out[i + 1]


def tridiag_solve(lower, diag, upper, rhs):
    cdef double[::1] lo = np.ascontiguousarray(lower, dtype=np.float64)
    cdef double[::1] di = np.ascontiguousarray(diag, dtype=np.float64)
    cdef double[::1] up = np.ascontiguousarray(upper, dtype=np.float64)
    cdef double[::1] rh = np.ascontiguousarray(rhs, dtype=np.float64)
    out = np.empty(di.shape[0])
    work = np.empty(di.shape[0])
    _thomas(lo, di, up, rh, out, work)
    return out


cdef class _Stepper:
    """Scratch buffers for one grid size."""
    cdef Py_ssize_t n
    cdef double dx
    cdef double[::1] y, lower, diag, upper, rhs, work, tmp

    def __init__(self, double[::1] y, double dx):
        self.n = y.shape[0]
        self.dx = dx
        self.y = y
        self.lower = np.empty(self.n)
        self.diag = np.empty(self.n)
        self.upper = np.empty(self.n)
        self.rhs = np.empty(self.n)
        self.work = np.empty(self.n)
        self.tmp = np.empty(self.n)

    cdef void step(self, double[::1] q, double[::1] out, double shift, double velocity,
                   double h, double diffusion, bint compact) noexcept nogil:
        cdef Py_ssize_t j, n = self.n
        cdef double vh = velocity * h * 0.5, e, f, lam, a, off, rb
        if fabs(vh) > 1e-12:
            e = exp(vh)
            f = expm1(vh) / velocity
        else:
            e = 1.0 + vh
            f = 0.5 * h * (1.0 + 0.5 * vh)
        for j in range(n):
            self.tmp[j] = q[j] * exp(-exp(self.y[j] + shift) * f)
        if diffusion > 0.0:
            a = 0.5 * h * diffusion / (self.dx * self.dx)
            off = a - COMPACT if compact else a
            rb = a + COMPACT if compact else a
            for j in range(n):
                self.lower[j] = -off
                self.upper[j] = -off
                self.diag[j] = 1.0 + 2.0 * off
            self.diag[0] = 1.0 + off
            self.diag[n - 1] = 1.0 + off
            self.rhs[0] = self.tmp[0] + rb * (self.tmp[1] - self.tmp[0])
            self.rhs[n - 1] = self.tmp[n - 1] + rb * (self.tmp[n - 2] - self.tmp[n - 1])
            for j in range(1, n - 1):
                self.rhs[j] = self.tmp[j] + rb * (self.tmp[j + 1] - 2.0 * self.tmp[j] + self.tmp[j - 1])
            _thomas(self.lower, self.diag, self.upper, self.rhs, out, self.work)
        else:
            for j in range(n):
                out[j] = self.tmp[j]
        for j in range(n):
            lam = exp(self.y[j] + shift)
            out[j] = out[j] * exp(-lam * e * f)

    cdef void moments(self, double[::1] q, double shift, double* m0, double* m1,
                      double* m2) noexcept nogil:
        cdef Py_ssize_t j
        cdef double a0 = 0.0, a1 = 0.0, a2 = 0.0, lam, w
        for j in range(self.n):
            lam = exp(self.y[j] + shift)
            w = q[j] * self.dx
            a0 += w
            a1 += lam * w
            a2 += lam * lam * w
        m0[0] = a0
        m1[0] = a1
        m2[0] = a2


cdef int _clamp(double[::1] q) noexcept nogil:
    cdef Py_ssize_t j
    cdef int bad = 0
    for j in range(q.shape[0]):
        if q[j] < 0.0:
            if q[j] < -1e-12:
                bad += 1
            q[j] = 0.0
    return bad


def forward_step(q, y, double shift, double velocity, double h, double diffusion, double dx,
                 bint compact=False):
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] qv = np.array(q, dtype=np.float64)
    out = np.empty(yv.shape[0])
    cdef _Stepper st = _Stepper(yv, dx)
    st.step(qv, out, shift, velocity, h, diffusion, compact)
    return out, shift + velocity * h


def moments(q, y, double shift, double dx):
    cdef double a0, a1, a2
    cdef _Stepper st = _Stepper(np.ascontiguousarray(y, dtype=np.float64), dx)
    st.moments(np.ascontiguousarray(q, dtype=np.float64), shift, &a0, &a1, &a2)
    return a0, a1, a2


def calibrate_march(q, y, double dx, times, double shift0, double v0, double sigma,
                    target_hazard, double tol, int max_iter, snap_idx,
                    double compact_from=np.inf):
    cdef double[::1] t = np.ascontiguousarray(times, dtype=np.float64)
    cdef double[::1] target = np.ascontiguousarray(target_hazard, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n_nodes = t.shape[0], n_grid = yv.shape[0], n, j
    cdef double d_std = lattice_diffusion(sigma, dx)
    cdef double d_cmp = lattice_diffusion(sigma, dx, True)
    cdef double diffusion
    cdef bint compact
    cdef _Stepper st = _Stepper(yv, dx)

    velocity_a = np.zeros(n_nodes - 1)
    shifts_a = np.zeros(n_nodes)
    mass_a = np.zeros(n_nodes)
    m1_a = np.zeros(n_nodes)
    m2_a = np.zeros(n_nodes)
    snaps = np.zeros((len(snap_idx), n_grid))
    snap_lookup = np.full(n_nodes, -1, dtype=np.int64)
    for i, k in enumerate(snap_idx):
        snap_lookup[int(k)] = i
    cdef double[::1] velocity = velocity_a, shifts = shifts_a
    cdef double[::1] mass = mass_a, m1 = m1_a, m2 = m2_a
    cdef long long[::1] lookup = snap_lookup

    cdef double[::1] cur = np.array(q, dtype=np.float64)
    cdef double[::1] qa = np.empty(n_grid), qb = np.empty(n_grid), swap
    cdef double shift = shift0, v = v0, h, log_target
    cdef double va, vb, vc, fa, fb, a0, a1, a2
    cdef double max_res = 0.0
    cdef int used, max_used = 0, negatives = 0
    shifts[1] = shift0

    for n in range(1, n_nodes):
        st.moments(cur, shift, &mass[n], &m1[n], &m2[n])
        if lookup[n] >= 0:
            snaps[lookup[n]] = np.asarray(cur)
        if n == n_nodes - 1:
            break
        h = t[n + 1] - t[n]
        log_target = log(target[n + 1])
        compact = t[n] >= compact_from
        diffusion = d_cmp if compact else d_std

        va = v
        st.step(cur, qa, shift, va, h, diffusion, compact)
        st.moments(qa, shift + va * h, &a0, &a1, &a2)
        if not (a0 > 0.0 and a1 > 0.0):
            raise ExtinctionError(f"pseudo-density extinct at t={t[n + 1]}")
        fa = log(a1 / a0) - log_target
        used = 1
        if fabs(fa) > tol:
            vb = va - fa / h
            st.step(cur, qb, shift, vb, h, diffusion, compact)
            st.moments(qb, shift + vb * h, &a0, &a1, &a2)
            if not (a0 > 0.0 and a1 > 0.0):
                raise ExtinctionError(f"pseudo-density extinct at t={t[n + 1]}")
            fb = log(a1 / a0) - log_target
            used += 1
            while fabs(fb) > tol and used < max_iter and fb != fa:
                vc = vb - fb * (vb - va) / (fb - fa)
                va = vb
                fa = fb
                vb = vc
                st.step(cur, qb, shift, vb, h, diffusion, compact)
                st.moments(qb, shift + vb * h, &a0, &a1, &a2)
                if not (a0 > 0.0 and a1 > 0.0):
                    raise ExtinctionError(f"pseudo-density extinct at t={t[n + 1]}")
                fb = log(a1 / a0) - log_target
                used += 1
            va = vb
            fa = fb
            swap = qa
            qa = qb
            qb = swap
        max_res = fmax(max_res, fabs(fa))
        if used > max_used:
            max_used = used
        v = va
        shift = shift + va * h
        swap = cur
        cur = qa
        qa = swap
        negatives += _clamp(cur)
        velocity[n] = v
        shifts[n + 1] = shift

    return {
        "velocity": velocity_a, "shifts": shifts_a, "mass": mass_a, "m1": m1_a,
        "m2": m2_a, "snapshots": snaps, "q_final": np.asarray(cur).copy(),
        "max_residual": max_res, "max_iterations": max_used,
        "negative_count": negatives,
    }


def survival_march(q, y, double dx, times, shifts, Py_ssize_t n_start,
                   Py_ssize_t n_end, double sigma, double compact_from=np.inf):
    cdef double[::1] t = np.ascontiguousarray(times, dtype=np.float64)
    cdef double[::1] s = np.ascontiguousarray(shifts, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef _Stepper st = _Stepper(yv, dx)
    cdef double[::1] cur = np.array(q, dtype=np.float64)
    cdef double[::1] nxt = np.empty(yv.shape[0]), swap
    out_a = np.empty(n_end - n_start + 1)
    cdef double[::1] out = out_a
    cdef double d_std = lattice_diffusion(sigma, dx)
    cdef double d_cmp = lattice_diffusion(sigma, dx, True)
    cdef double h, a0, a1, a2
    cdef bint compact
    cdef Py_ssize_t n
    st.moments(cur, s[n_start], &a0, &a1, &a2)
    out[0] = a0
    for n in range(n_start, n_end):
        h = t[n + 1] - t[n]
        compact = t[n] >= compact_from
        st.step(cur, nxt, s[n], (s[n + 1] - s[n]) / h, h, d_cmp if compact else d_std, compact)
        swap = cur
        cur = nxt
        nxt = swap
        st.moments(cur, s[n + 1], &a0, &a1, &a2)
        out[n - n_start + 1] = a0
    return out_a, np.asarray(cur).copy()


cdef void _nonlinear(double[::1] beta, double coef, double dx, double[::1] out) noexcept nogil:
    cdef Py_ssize_t j, n = beta.shape[0]
    cdef double g, b
    out[0] = 0.0
    out[n - 1] = 0.0
    for j in range(1, n - 1):
        g = (beta[j + 1] - beta[j - 1]) / (2.0 * dx)
        b = beta[j]
        if b < BETA_FLOOR:
            b = BETA_FLOOR
        out[j] = coef * g * g / b


def hjb_march(y, double dx, times, shifts, Py_ssize_t n_end, double sigma,
              double gamma, double r, store_idx):
    cdef double[::1] t = np.ascontiguousarray(times, dtype=np.float64)
    cdef double[::1] s = np.ascontiguousarray(shifts, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0], k, j
    cdef double diffusion = lattice_diffusion(sigma, dx)
    cdef double coef = 0.5 * (gamma - 1.0) * sigma * sigma
    cdef bint nonlinear = sigma > 0.0 and gamma != 1.0
    cdef double h, off, lap

    beta_a = np.zeros(n)
    cdef double[::1] beta = beta_a
    cdef double[::1] pred = np.zeros(n), n1 = np.zeros(n), n2 = np.zeros(n)
    cdef double[::1] lower = np.empty(n), diag = np.empty(n), upper = np.empty(n)
    cdef double[::1] rhs = np.empty(n), rhs2 = np.empty(n), work = np.empty(n)
    cdef double[::1] react_old = np.empty(n), react_new = np.empty(n)
    stored = np.zeros((len(store_idx), n))
    store_lookup = np.full(n_end + 1, -1, dtype=np.int64)
    for i, kk in enumerate(store_idx):
        store_lookup[int(kk)] = i
    cdef long long[::1] lookup = store_lookup
    cdef int negatives = 0

    for j in range(n):
        react_old[j] = r + exp(yv[j] + s[n_end]) / gamma
    if lookup[n_end] >= 0:
        stored[lookup[n_end]] = beta_a
    for k in range(n_end - 1, -1, -1):
        h = t[k + 1] - t[k]
        off = 0.5 * h * diffusion / (dx * dx)
        for j in range(n):
            react_new[j] = r + exp(yv[j] + s[k]) / gamma
            if j == 0:
                lap = beta[1] - beta[0]
            elif j == n - 1:
                lap = beta[n - 2] - beta[n - 1]
            else:
                lap = beta[j + 1] - 2.0 * beta[j] + beta[j - 1]
            rhs[j] = beta[j] + 0.5 * h * (-react_old[j] * beta[j]) + off * lap + h
            lower[j] = -off
            upper[j] = -off
            diag[j] = 1.0 + 2.0 * off + 0.5 * h * react_new[j]
        diag[0] -= off
        diag[n - 1] -= off
        if nonlinear:
            _nonlinear(beta, coef, dx, n1)
            for j in range(n):
                rhs2[j] = rhs[j] + h * n1[j]
            _thomas(lower, diag, upper, rhs2, pred, work)
            for j in range(n):
                if pred[j] < 0.0:
                    pred[j] = 0.0
            _nonlinear(pred, coef, dx, n2)
            for j in range(n):
                rhs2[j] = rhs[j] + 0.5 * h * (n1[j] + n2[j])
            _thomas(lower, diag, upper, rhs2, beta, work)
        else:
            _thomas(lower, diag, upper, rhs, beta, work)
        negatives += _clamp(beta)
        for j in range(n):
            react_old[j] = react_new[j]
        if lookup[k] >= 0:
            stored[lookup[k]] = beta_a
    return beta_a.copy(), stored, negatives
