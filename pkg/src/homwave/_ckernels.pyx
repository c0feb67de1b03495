# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: CSR conjugate gradients, the implicit wave step loop,
and the pairwise distance kernels used by the Hausdorff estimators."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, pow, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline void _csr_matvec(const cnp.int32_t[::1] indptr, const cnp.int32_t[::1] indices,
                             const double[::1] data, const double* x, double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(n):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * x[indices[k]]
        y[i] = s


cdef inline double _dot(const double* a, const double* b, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(n):
        s += a[i] * b[i]
    return s


cdef inline void _remove_mean(double* a, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double m = 0.0
    for i in range(n):
        m += a[i]
    m /= n
    for i in range(n):
        a[i] -= m


cdef int _cg(const cnp.int32_t[::1] indptr, const cnp.int32_t[::1] indices, const double[::1] data,
             const double* b, double* x, Py_ssize_t n, double tol, int maxiter, int zero_mean,
             double* r, double* p, double* ap, double* relres) noexcept nogil:
    # Plain CG. Returns iteration count, or -1 if maxiter hit.
    cdef Py_ssize_t i
    cdef int it
    cdef double bnorm, rr, rr_new, alpha, beta, pap
    bnorm = sqrt(_dot(b, b, n))
    if bnorm == 0.0:
        for i in range(n):
            x[i] = 0.0
        relres[0] = 0.0
        return 0
    if zero_mean:
        _remove_mean(x, n)
    _csr_matvec(indptr, indices, data, x, ap, n)
    for i in range(n):
        r[i] = b[i] - ap[i]
    if zero_mean:
        _remove_mean(r, n)
    for i in range(n):
        p[i] = r[i]
    rr = _dot(r, r, n)
    if sqrt(rr) <= tol * bnorm:
        relres[0] = sqrt(rr) / bnorm
        return 0
    for it in range(1, maxiter + 1):
        _csr_matvec(indptr, indices, data, p, ap, n)
        pap = _dot(p, ap, n)
        if pap <= 0.0:
            relres[0] = sqrt(rr) / bnorm
            return -1
        alpha = rr / pap
        for i in range(n):
            x[i] += alpha * p[i]
            r[i] -= alpha * ap[i]
        if zero_mean:
            _remove_mean(r, n)
        rr_new = _dot(r, r, n)
        if sqrt(rr_new) <= tol * bnorm:
            relres[0] = sqrt(rr_new) / bnorm
            if zero_mean:
                _remove_mean(x, n)
            return it
        beta = rr_new / rr
        rr = rr_new
        for i in range(n):
            p[i] = r[i] + beta * p[i]
    relres[0] = sqrt(rr) / bnorm
    if zero_mean:
        _remove_mean(x, n)
    return -1


def cg_csr(const cnp.int32_t[::1] indptr, const cnp.int32_t[::1] indices, const double[::1] data,
           const double[::1] b, double[::1] x, double tol, int maxiter, bint zero_mean=False):
    """Solve A x = b in place (x holds the initial guess). Returns (iters, relres);
    iters is -1 when maxiter was reached."""
    cdef Py_ssize_t n = b.shape[0]
    cdef double relres = 0.0
    cdef int it
    cdef double* r = <double*> malloc(3 * n * sizeof(double))
    if r == NULL:
        raise MemoryError()
    with nogil:
        it = _cg(indptr, indices, data, &b[0], &x[0], n, tol, maxiter, zero_mean,
                 r, r + n, r + 2 * n, &relres)
    free(r)
    return it, relres


def wave_advance(const cnp.int32_t[::1] k_ptr, const cnp.int32_t[::1] k_idx, const double[::1] k_dat,
                 const cnp.int32_t[::1] s_ptr, const cnp.int32_t[::1] s_idx, const double[::1] s_dat,
                 const cnp.int32_t[::1] e_ptr, const cnp.int32_t[::1] e_idx, const double[::1] e_dat,
                 const double[::1] mass, double[::1] u, double[::1] v, const double[::1] g,
                 double c1, double c3, double gamma, double dt, int nsteps,
                 double tol, int maxiter, double blowup, int check_every):
    """Advance (u, v) in place by nsteps linearly implicit Crank-Nicolson steps.

    k_*: operator stiffness (shift included), s_*: step matrix, e_*: the
    reference stiffness for the blow-up check. f(s) = c3 s^3 + c1 s.
    Returns (status, steps_done, cg_iters, worst_relres); status 0 ok,
    1 solver failure, 2 blow-up.
    """
    cdef Py_ssize_t n = u.shape[0], i
    cdef int step, it, status = 0, total = 0, done = 0
    cdef double relres = 0.0, worst = 0.0, a = 1.0 - 0.5 * gamma * dt
    cdef double q = 0.25 * dt * dt, uu, en
    cdef double* work = <double*> malloc(7 * n * sizeof(double))
    if work == NULL:
        raise MemoryError()
    cdef double* tmp = work
    cdef double* kt = work + n
    cdef double* rhs = work + 2 * n
    cdef double* vn = work + 3 * n
    cdef double* r = work + 4 * n
    with nogil:
        for step in range(nsteps):
            for i in range(n):
                tmp[i] = dt * u[i] + q * v[i]
            _csr_matvec(k_ptr, k_idx, k_dat, tmp, kt, n)
            for i in range(n):
                uu = u[i]
                rhs[i] = mass[i] * (a * v[i] + dt * (g[i] - (c3 * uu * uu + c1) * uu)) - kt[i]
                vn[i] = v[i]
            it = _cg(s_ptr, s_idx, s_dat, rhs, vn, n, tol, maxiter, 0, r, r + n, r + 2 * n, &relres)
            if relres > worst:
                worst = relres
            if it < 0:
                status = 1
                break
            total += it
            for i in range(n):
                u[i] += 0.5 * dt * (v[i] + vn[i])
                v[i] = vn[i]
            done += 1
            if check_every > 0 and done % check_every == 0:
                _csr_matvec(e_ptr, e_idx, e_dat, &u[0], tmp, n)
                en = _dot(&u[0], tmp, n)
                for i in range(n):
                    en += mass[i] * v[i] * v[i]
                if not (en <= blowup * blowup):
                    status = 2
                    break
    free(work)
    return status, done, total, worst


def directed_hausdorff(const double[:, ::1] a, const double[:, ::1] b):
    """sup over rows of a of the Euclidean distance to the nearest row of b,
    with early exit once a row can no longer raise the running sup."""
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], d = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double cmax = 0.0, cmin, s, t
    with nogil:
        for i in range(na):
            cmin = INFINITY
            for j in range(nb):
                s = 0.0
                for k in range(d):
                    t = a[i, k] - b[j, k]
                    s += t * t
                    if s >= cmin:
                        break
                if s < cmin:
                    cmin = s
                    if cmin <= cmax:
                        break
            if cmin > cmax and cmin != INFINITY:
                cmax = cmin
    return sqrt(cmax)


def holder_seminorm(const double[::1] vals, const double[:, ::1] pts, const cnp.int64_t[::1] pi,
                    const cnp.int64_t[::1] pj, double beta):
    """max |vals[i]-vals[j]| / |pts[i]-pts[j]|^beta over the listed pairs."""
    cdef Py_ssize_t m = pi.shape[0], d = pts.shape[1], k, c
    cdef double best = 0.0, dist, t, q
    with nogil:
        for k in range(m):
            dist = 0.0
            for c in range(d):
                t = pts[pi[k], c] - pts[pj[k], c]
                dist += t * t
            if dist == 0.0:
                continue
            q = fabs(vals[pi[k]] - vals[pj[k]]) / pow(dist, 0.5 * beta)
            if q > best:
                best = q
    return best
