"""Pure NumPy kernels: coordinate-descent NNLS and the block descent loop.

All solvers work on Gram-form data (X'X, X'y, ...) so per-iteration cost is
independent of the number of rows. The compiled twin in ``_speedups.pyx``
implements the same functions with the same update order; keep the two in
lockstep when changing anything here.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


class SingularBlockError(Exception):
    """A coefficient-block system was numerically singular.

    Only the compiled kernel raises this; the pure kernel falls back to a
    minimum-norm solve. Callers that hit it should rerun with ``pure``.
    """


def nnls_gram(G, c, h, ysum, s, mu, a0, a, tol, max_sweeps):
    """Cyclic coordinate descent for the penalized nonnegative stacking fit.

    Minimizes (1/(2s))||y - a0*1 - Z a||^2 + (mu/2)||a||^2 over a >= 0 with a0
    free, given G = Z'Z, c = Z'y, h = Z'1, ysum = 1'y and the row count s.
    Weights are clamped at zero; the intercept gets an exact update each
    sweep. Stops when the largest coordinate change in a sweep drops below
    ``tol`` or after ``max_sweeps`` sweeps.

    Returns (a0, a, sweeps_used). ``a`` is a fresh array.
    """
    a = np.array(a, dtype=float, copy=True)
    a0 = float(a0)
    k_dim = a.shape[0]
    for sweep in range(max_sweeps):
        max_change = 0.0
        for k in range(k_dim):
            hess = G[k, k] / s + mu
            if hess <= 0.0:
                # zero column and no penalty: weight is irrelevant, park at 0
                new = 0.0
            else:
                grad = (G[k] @ a - c[k] + a0 * h[k]) / s + mu * a[k]
                new = a[k] - grad / hess
                if new < 0.0:
                    new = 0.0
            change = abs(new - a[k])
            if change > max_change:
                max_change = change
            a[k] = new
        new0 = (ysum - h @ a) / s
        change = abs(new0 - a0)
        if change > max_change:
            max_change = change
        a0 = new0
        if max_change < tol:
            return a0, a, sweep + 1
    return a0, a, max_sweeps


def _quad_form_sse(yss, ysum, s, cz, hz, Gz, a0, a):
    """||y - a0*1 - Z a||^2 from Gram pieces, clamped at zero."""
    val = (yss - 2.0 * a0 * ysum - 2.0 * (a @ cz) + a0 * a0 * s
           + 2.0 * a0 * (hz @ a) + a @ (Gz @ a))
    return val if val > 0.0 else 0.0


def bcd_objective(eta, mu, s, Ge, ce, he, ysum, yss_e,
                  Gks, cks, ns, lams, yss_ks, mask, B, a0, a):
    """Joint objective evaluated from Gram-form data."""
    cz = B.T @ ce
    hz = B.T @ he
    Gz = B.T @ (Ge @ B)
    val = eta * (_quad_form_sse(yss_e, ysum, s, cz, hz, Gz, a0, a) / (2.0 * s)
                 + 0.5 * mu * (a @ a))
    for k in range(B.shape[1]):
        bk = B[:, k]
        sse = yss_ks[k] - 2.0 * (bk @ cks[k]) + bk @ (Gks[k] @ bk)
        if sse < 0.0:
            sse = 0.0
        val += (1.0 - eta) * (sse / (2.0 * ns[k])
                              + 0.5 * lams[k] * np.sum(mask * bk * bk))
    return float(val)


def bcd_fit(eta, mu, s, Ge, ce, he, ysum, yss_e,
            Gks, cks, ns, lams, yss_ks, mask,
            B, a0, a, tol, max_iter, nnls_tol, nnls_max_sweeps):
    """Block descent on the joint objective: each study's coefficient block
    gets an exact penalized solve, then the weight block gets a full NNLS
    pass warm-started at the current weights.

    Returns (B, a0, a, trace, converged, n_fallback) where ``trace`` holds
    the objective at the start and after every full cycle. ``n_fallback``
    counts coefficient solves that hit a singular system and fell back to a
    minimum-norm solution.
    """
    B = np.array(B, dtype=float, copy=True)
    a = np.array(a, dtype=float, copy=True)
    a0 = float(a0)
    k_dim = B.shape[1]
    n_fallback = 0
    trace = [bcd_objective(eta, mu, s, Ge, ce, he, ysum, yss_e,
                           Gks, cks, ns, lams, yss_ks, mask, B, a0, a)]
    converged = False
    for _ in range(max_iter):
        for k in range(k_dim):
            ak = a[k]
            v = B @ a - ak * B[:, k]
            H = eta * (ak * ak / s) * Ge + (1.0 - eta) / ns[k] * Gks[k]
            H[np.diag_indices_from(H)] += (1.0 - eta) * lams[k] * mask
            rhs = (eta * (ak / s) * (ce - a0 * he - Ge @ v)
                   + (1.0 - eta) / ns[k] * cks[k])
            try:
                fac = scipy.linalg.cho_factor(H, check_finite=False)
                beta = scipy.linalg.cho_solve(fac, rhs, check_finite=False)
                beta += scipy.linalg.cho_solve(fac, rhs - H @ beta,
                                               check_finite=False)
            except scipy.linalg.LinAlgError:
                beta = np.linalg.lstsq(H, rhs, rcond=None)[0]
                n_fallback += 1
            B[:, k] = beta
        Gz = B.T @ (Ge @ B)
        Gz = 0.5 * (Gz + Gz.T)
        a0, a, _ = nnls_gram(Gz, B.T @ ce, B.T @ he, ysum, s, mu,
                             a0, a, nnls_tol, nnls_max_sweeps)
        f = bcd_objective(eta, mu, s, Ge, ce, he, ysum, yss_e,
                          Gks, cks, ns, lams, yss_ks, mask, B, a0, a)
        f_prev = trace[-1]
        trace.append(f)
        if abs(f - f_prev) / max(1.0, abs(f_prev)) < tol:
            converged = True
            break
    return B, a0, a, np.asarray(trace), converged, n_fallback
