"""Pure numpy versions of the compiled kernels (same signatures, same results
up to floating-point summation order)."""

import numpy as np
import scipy.sparse as sp


def _csr(indptr, indices, data):
    n = len(indptr) - 1
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def _cg(A, b, x, tol, maxiter, zero_mean):
    bnorm = np.sqrt(b @ b)
    if bnorm == 0.0:
        x[:] = 0.0
        return 0, 0.0
    if zero_mean:
        x -= x.mean()
    r = b - A @ x
    if zero_mean:
        r -= r.mean()
    p = r.copy()
    rr = r @ r
    if np.sqrt(rr) <= tol * bnorm:
        return 0, np.sqrt(rr) / bnorm
    for it in range(1, maxiter + 1):
        ap = A @ p
        pap = p @ ap
        if pap <= 0.0:
            return -1, np.sqrt(rr) / bnorm
        alpha = rr / pap
        x += alpha * p
        r -= alpha * ap
        if zero_mean:
            r -= r.mean()
        rr_new = r @ r
        if np.sqrt(rr_new) <= tol * bnorm:
            if zero_mean:
                x -= x.mean()
            return it, np.sqrt(rr_new) / bnorm
        p = r + (rr_new / rr) * p
        rr = rr_new
    if zero_mean:
        x -= x.mean()
    return -1, np.sqrt(rr) / bnorm


def cg_csr(indptr, indices, data, b, x, tol, maxiter, zero_mean=False):
    return _cg(_csr(indptr, indices, data), np.asarray(b), x, tol, maxiter, zero_mean)


def wave_advance(k_ptr, k_idx, k_dat, s_ptr, s_idx, s_dat, e_ptr, e_idx, e_dat,
                 mass, u, v, g, c1, c3, gamma, dt, nsteps, tol, maxiter, blowup, check_every):
    K = _csr(k_ptr, k_idx, k_dat)
    S = _csr(s_ptr, s_idx, s_dat)
    E = _csr(e_ptr, e_idx, e_dat)
    a = 1.0 - 0.5 * gamma * dt
    q = 0.25 * dt * dt
    status, done, total, worst = 0, 0, 0, 0.0
    for _ in range(nsteps):
        rhs = mass * (a * v + dt * (g - (c3 * u * u + c1) * u)) - K @ (dt * u + q * v)
        vn = v.copy()
        it, relres = _cg(S, rhs, vn, tol, maxiter, False)
        worst = max(worst, relres)
        if it < 0:
            status = 1
            break
        total += it
        u += 0.5 * dt * (v + vn)
        v[:] = vn
        done += 1
        if check_every > 0 and done % check_every == 0:
            en = u @ (E @ u) + mass @ (v * v)
            if not en <= blowup * blowup:
                status = 2
                break
    return status, done, total, worst


def directed_hausdorff(a, b):
    best = 0.0
    for start in range(0, a.shape[0], 256):
        blk = a[start:start + 256]
        d2 = (blk * blk).sum(1)[:, None] - 2.0 * blk @ b.T + (b * b).sum(1)[None, :]
        best = max(best, float(np.maximum(d2.min(axis=1), 0.0).max()))
    return float(np.sqrt(best))


def holder_seminorm(vals, pts, pi, pj, beta):
    d = np.sqrt(((pts[pi] - pts[pj]) ** 2).sum(1))
    ok = d > 0
    if not ok.any():
        return 0.0
    return float((np.abs(vals[pi[ok]] - vals[pj[ok]]) / d[ok] ** beta).max())
