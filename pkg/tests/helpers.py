"""Independent oracles used across the test suite.

Everything here is written straight from the objective definitions, not from
the package internals, so a bug in the implementation cannot hide in a shared
code path.
"""

from __future__ import annotations

import numpy as np


def ridge_normal_equations(design, y, lam, mask, scale):
    """Solve ((1/scale) X'X + lam*diag(mask)) b = (1/scale) X'y directly."""
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    h = design.T @ design / scale + lam * np.diag(mask)
    return np.linalg.solve(h, design.T @ y / scale)


def ridge_stationarity_residual(design, y, beta, lam, mask, scale):
    """Max-norm of the gradient of (1/(2*scale))||y-Xb||^2 + (lam/2)||D b||^2."""
    grad = design.T @ (design @ beta - y) / scale + lam * mask * beta
    return float(np.max(np.abs(grad)))


def nnls_objective(z, y, mu, intercept, w):
    n = len(y)
    resid = y - intercept - z @ w
    return float(resid @ resid / (2.0 * n) + 0.5 * mu * (w @ w))


def nnls_kkt_violation(z, y, mu, intercept, w, active_tol=0.0):
    """Worst KKT violation for min (1/(2n))||y - a0 - Z w||^2 + (mu/2)||w||^2, w >= 0.

    Returns the largest of: |gradient| over strictly positive weights,
    negative part of the gradient over zero weights, and the intercept
    gradient magnitude.
    """
    n = len(y)
    resid = y - intercept - z @ w
    grad = -(z.T @ resid) / n + mu * w
    grad0 = -float(np.sum(resid)) / n
    worst = abs(grad0)
    for j in range(len(w)):
        if w[j] > active_tol:
            worst = max(worst, abs(grad[j]))
        else:
            worst = max(worst, max(0.0, -grad[j]))
    return worst


def nnls_projected_gradient(z, y, mu, max_iter=1_000_000, tol=1e-12):
    """Long-run projected gradient solver for the same objective.

    Deliberately naive: fixed step 1/L from the exact Hessian spectrum,
    projection onto the nonnegative orthant each step. Used as a slow but
    independent reference for coordinate-descent solutions.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = z.shape
    col1 = np.ones(n)
    # Hessian of (a0, w) block form
    h = np.empty((k + 1, k + 1))
    h[0, 0] = 1.0
    h[0, 1:] = z.sum(axis=0) / n
    h[1:, 0] = h[0, 1:]
    h[1:, 1:] = z.T @ z / n + mu * np.eye(k)
    step = 1.0 / max(np.linalg.eigvalsh(h).max(), 1e-12)
    lin = np.concatenate(([y.sum() / n], z.T @ y / n))
    x = np.zeros(k + 1)
    for _ in range(max_iter):
        grad = h @ x - lin
        x_new = x - step * grad
        x_new[1:] = np.maximum(x_new[1:], 0.0)
        if np.max(np.abs(x_new - x)) < tol:
            x = x_new
            break
        x = x_new
    return float(x[0]), x[1:]


def sample_covariance(rows):
    """Plain sample covariance of row vectors, ddof=1."""
    rows = np.asarray(rows, dtype=float)
    centered = rows - rows.mean(axis=0)
    return centered.T @ centered / (rows.shape[0] - 1)


def rmse_oracle(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def joint_objective_oracle(eta, mu, ensemble_design, ensemble_y,
                           study_designs, study_ys, lams, mask, b_mat, a0, a):
    """Term-by-term evaluation of the joint ensemble objective.

    eta * [ (1/(2s))||y_e - a0 - sum_k a_k X_e b_k||^2 + (mu/2)||a||^2 ]
    + (1-eta) * sum_k [ (1/(2 n_k))||y_k - X_k b_k||^2 + (lam_k/2)||D b_k||^2 ]
    """
    s = len(ensemble_y)
    resid = ensemble_y - a0 - (ensemble_design @ b_mat) @ a
    val = eta * (resid @ resid / (2.0 * s) + 0.5 * mu * (a @ a))
    for k, (xk, yk) in enumerate(zip(study_designs, study_ys)):
        rk = yk - xk @ b_mat[:, k]
        val += (1.0 - eta) * (rk @ rk / (2.0 * len(yk))
                              + 0.5 * lams[k] * np.sum(mask * b_mat[:, k] ** 2))
    return float(val)


def random_problem(rng, n, p, intercept_scale=1.0):
    """Well-scaled random regression data for solver batteries."""
    x = rng.standard_normal((n, p))
    beta = rng.standard_normal(p + 1) * intercept_scale
    design = np.column_stack([np.ones(n), x])
    y = design @ beta + rng.standard_normal(n)
    return x, y
