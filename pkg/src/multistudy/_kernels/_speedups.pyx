# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``pure.py``.

Same functions, same update order, same stopping rules. The one behavioral
difference: a singular coefficient block raises SingularBlockError instead
of falling back to a minimum-norm solve; callers rerun the pure kernel in
that (degenerate) case.
"""

import numpy as np

from libc.math cimport fabs
from scipy.linalg.cython_lapack cimport dposv, dpotrs

from .pure import SingularBlockError


cdef int _nnls_cd(double[:, ::1] G, double[::1] c, double[::1] h,
                  double ysum, double s, double mu, double* a0_io,
                  double[::1] a, double tol, int max_sweeps) noexcept:
    cdef int K = a.shape[0]
    cdef int sweep, k, j
    cdef double a0 = a0_io[0]
    cdef double hess, grad, new, change, max_change, dot, new0
    cdef int sweeps_used = max_sweeps
    for sweep in range(max_sweeps):
        max_change = 0.0
        for k in range(K):
            hess = G[k, k] / s + mu
            if hess <= 0.0:
                new = 0.0
            else:
                dot = 0.0
                for j in range(K):
                    dot += G[k, j] * a[j]
                grad = (dot - c[k] + a0 * h[k]) / s + mu * a[k]
                new = a[k] - grad / hess
                if new < 0.0:
                    new = 0.0
            change = fabs(new - a[k])
            if change > max_change:
                max_change = change
            a[k] = new
        dot = 0.0
        for j in range(K):
            dot += h[j] * a[j]
        new0 = (ysum - dot) / s
        change = fabs(new0 - a0)
        if change > max_change:
            max_change = change
        a0 = new0
        if max_change < tol:
            sweeps_used = sweep + 1
            break
    a0_io[0] = a0
    return sweeps_used


def nnls_gram(G, c, h, double ysum, double s, double mu, double a0, a,
              double tol, int max_sweeps):
    cdef double[:, ::1] Gv = np.ascontiguousarray(G, dtype=np.float64)
    cdef double[::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    a_np = np.array(a, dtype=np.float64, copy=True)
    cdef double[::1] av = a_np
    cdef double a0_local = a0
    cdef int sweeps = _nnls_cd(Gv, cv, hv, ysum, s, mu, &a0_local, av,
                               tol, max_sweeps)
    return a0_local, a_np, sweeps


cdef double _objective(double eta, double mu, double s,
                       double[:, ::1] Ge, double[::1] ce, double[::1] he,
                       double ysum, double yss_e,
                       double[:, :, ::1] Gks, double[:, ::1] cks,
                       double[::1] ns, double[::1] lams, double[::1] yss_ks,
                       double[::1] mask, double[:, ::1] B,
                       double a0, double[::1] a,
                       double[::1] w_m) noexcept:
    # w_m is an (m,) scratch buffer
    cdef int m = B.shape[0]
    cdef int K = B.shape[1]
    cdef int i, j, k
    cdef double val, sse, dot, cz_k, hz_k, pen, aa

    # stacking residual sum of squares from Gram pieces
    sse = yss_e - 2.0 * a0 * ysum + a0 * a0 * s
    for i in range(m):
        dot = 0.0
        for k in range(K):
            dot += B[i, k] * a[k]
        w_m[i] = dot            # w_m = B a
    for i in range(m):
        cz_k = 0.0
        for j in range(m):
            cz_k += Ge[i, j] * w_m[j]
        sse += w_m[i] * cz_k    # (Ba)' Ge (Ba), accumulated row by row
        sse -= 2.0 * ce[i] * w_m[i]
        sse += 2.0 * a0 * he[i] * w_m[i]
    if sse < 0.0:
        sse = 0.0
    aa = 0.0
    for k in range(K):
        aa += a[k] * a[k]
    val = eta * (sse / (2.0 * s) + 0.5 * mu * aa)

    for k in range(K):
        sse = yss_ks[k]
        pen = 0.0
        for i in range(m):
            dot = 0.0
            for j in range(m):
                dot += Gks[k, i, j] * B[j, k]
            sse += B[i, k] * dot - 2.0 * cks[k, i] * B[i, k]
            pen += mask[i] * B[i, k] * B[i, k]
        if sse < 0.0:
            sse = 0.0
        val += (1.0 - eta) * (sse / (2.0 * ns[k]) + 0.5 * lams[k] * pen)
    return val


def bcd_fit(double eta, double mu, double s, Ge, ce, he,
            double ysum, double yss_e, Gks, cks, ns, lams, yss_ks, mask,
            B, double a0, a, double tol, int max_iter,
            double nnls_tol, int nnls_max_sweeps):
    cdef double[:, ::1] Gev = np.ascontiguousarray(Ge, dtype=np.float64)
    cdef double[::1] cev = np.ascontiguousarray(ce, dtype=np.float64)
    cdef double[::1] hev = np.ascontiguousarray(he, dtype=np.float64)
    cdef double[:, :, ::1] Gksv = np.ascontiguousarray(Gks, dtype=np.float64)
    cdef double[:, ::1] cksv = np.ascontiguousarray(cks, dtype=np.float64)
    cdef double[::1] nsv = np.ascontiguousarray(ns, dtype=np.float64)
    cdef double[::1] lamsv = np.ascontiguousarray(lams, dtype=np.float64)
    cdef double[::1] yssv = np.ascontiguousarray(yss_ks, dtype=np.float64)
    cdef double[::1] maskv = np.ascontiguousarray(mask, dtype=np.float64)

    B_np = np.array(B, dtype=np.float64, copy=True, order="C")
    a_np = np.array(a, dtype=np.float64, copy=True)
    cdef double[:, ::1] Bv = B_np
    cdef double[::1] av = a_np

    cdef int m = Bv.shape[0]
    cdef int K = Bv.shape[1]
    cdef int it, i, j, k, l, info, one = 1
    cdef char uplo = b'U'
    cdef double ak, f, f_prev, dot, a0_local = a0
    cdef bint converged = False

    trace_np = np.empty(max_iter + 1, dtype=np.float64)
    cdef double[::1] trace = trace_np

    H_np = np.empty((m, m), dtype=np.float64)
    Hf_np = np.empty((m, m), dtype=np.float64)
    cdef double[:, ::1] H = H_np
    cdef double[:, ::1] Hf = Hf_np
    rhs_np = np.empty(m, dtype=np.float64)
    beta_np = np.empty(m, dtype=np.float64)
    resid_np = np.empty(m, dtype=np.float64)
    v_np = np.empty(m, dtype=np.float64)
    w_np = np.empty(m, dtype=np.float64)
    cdef double[::1] rhs = rhs_np
    cdef double[::1] beta = beta_np
    cdef double[::1] resid = resid_np
    cdef double[::1] v = v_np
    cdef double[::1] w_m = w_np
    Gz_np = np.empty((K, K), dtype=np.float64)
    W_np = np.empty((m, K), dtype=np.float64)
    cz_np = np.empty(K, dtype=np.float64)
    hz_np = np.empty(K, dtype=np.float64)
    cdef double[:, ::1] Gz = Gz_np
    cdef double[:, ::1] W = W_np
    cdef double[::1] cz = cz_np
    cdef double[::1] hz = hz_np

    trace[0] = _objective(eta, mu, s, Gev, cev, hev, ysum, yss_e, Gksv, cksv,
                          nsv, lamsv, yssv, maskv, Bv, a0_local, av, w_m)
    cdef int count = 1
    for it in range(max_iter):
        for k in range(K):
            ak = av[k]
            for i in range(m):
                dot = 0.0
                for l in range(K):
                    dot += Bv[i, l] * av[l]
                v[i] = dot - ak * Bv[i, k]
            for i in range(m):
                for j in range(m):
                    H[i, j] = (eta * (ak * ak / s) * Gev[i, j]
                               + (1.0 - eta) / nsv[k] * Gksv[k, i, j])
                H[i, i] += (1.0 - eta) * lamsv[k] * maskv[i]
            for i in range(m):
                dot = 0.0
                for j in range(m):
                    dot += Gev[i, j] * v[j]
                rhs[i] = (eta * (ak / s) * (cev[i] - a0_local * hev[i] - dot)
                          + (1.0 - eta) / nsv[k] * cksv[k, i])
            for i in range(m):
                beta[i] = rhs[i]
                for j in range(m):
                    Hf[i, j] = H[i, j]
            dposv(&uplo, &m, &one, &Hf[0, 0], &m, &beta[0], &m, &info)
            if info != 0:
                raise SingularBlockError(
                    f"singular coefficient block {k} (info={info})")
            # one refinement step, mirroring the pure kernel
            for i in range(m):
                dot = 0.0
                for j in range(m):
                    dot += H[i, j] * beta[j]
                resid[i] = rhs[i] - dot
            dpotrs(&uplo, &m, &one, &Hf[0, 0], &m, &resid[0], &m, &info)
            for i in range(m):
                beta[i] += resid[i]
                Bv[i, k] = beta[i]
        # weight block: NNLS on the member-prediction Gram
        for i in range(m):
            for k in range(K):
                dot = 0.0
                for j in range(m):
                    dot += Gev[i, j] * Bv[j, k]
                W[i, k] = dot
        for k in range(K):
            for l in range(K):
                dot = 0.0
                for i in range(m):
                    dot += Bv[i, k] * W[i, l]
                Gz[k, l] = dot
            dot = 0.0
            for i in range(m):
                dot += Bv[i, k] * cev[i]
            cz[k] = dot
            dot = 0.0
            for i in range(m):
                dot += Bv[i, k] * hev[i]
            hz[k] = dot
        for k in range(K):
            for l in range(k):
                dot = 0.5 * (Gz[k, l] + Gz[l, k])
                Gz[k, l] = dot
                Gz[l, k] = dot
        _nnls_cd(Gz, cz, hz, ysum, s, mu, &a0_local, av,
                 nnls_tol, nnls_max_sweeps)
        f = _objective(eta, mu, s, Gev, cev, hev, ysum, yss_e, Gksv, cksv,
                       nsv, lamsv, yssv, maskv, Bv, a0_local, av, w_m)
        f_prev = trace[count - 1]
        trace[count] = f
        count += 1
        dot = fabs(f_prev)
        if dot < 1.0:
            dot = 1.0
        if fabs(f - f_prev) / dot < tol:
            converged = True
            break
    return B_np, a0_local, a_np, trace_np[:count].copy(), converged, 0
