"""Shared model primitives: study containers, standardization, design
matrices, the penalized least-squares solver and the nonnegative stacking
solver that every estimator in this package is built from."""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np
import scipy.linalg

from . import _kernels


class RankDeficiencyWarning(UserWarning):
    """Raised when an unpenalized solve hit a singular system and a
    minimum-norm solution was returned instead."""


@dataclasses.dataclass
class Study:
    """One study's raw data.

    Parameters
    ----------
    id : str
        Opaque study label, unique within a collection.
    y : ndarray, shape (n,)
        Outcomes.
    X_raw : ndarray, shape (n, p)
        Unstandardized covariates, no intercept column.
    """

    id: str
    y: np.ndarray
    X_raw: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X_raw = np.asarray(self.X_raw, dtype=float)
        if self.X_raw.ndim != 2:
            raise ValueError(f"study {self.id!r}: X_raw must be 2-d")
        if self.y.ndim != 1:
            raise ValueError(f"study {self.id!r}: y must be 1-d")
        if self.X_raw.shape[0] != self.y.shape[0]:
            raise ValueError(
                f"study {self.id!r}: {self.y.shape[0]} outcomes but "
                f"{self.X_raw.shape[0]} covariate rows")
        if self.y.shape[0] < 1:
            raise ValueError(f"study {self.id!r}: empty study")
        if not (np.isfinite(self.y).all() and np.isfinite(self.X_raw).all()):
            raise ValueError(f"study {self.id!r}: non-finite entries")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X_raw.shape[1]


@dataclasses.dataclass
class Standardizer:
    """Per-column centering and scaling fitted on pooled training rows."""

    means: np.ndarray
    sds: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.means.shape[0]:
            raise ValueError(
                f"expected {self.means.shape[0]} covariate columns, "
                f"got shape {X.shape}")
        return (X - self.means) / self.sds

    def inverse_transform(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) * self.sds + self.means


@dataclasses.dataclass
class EnsembleWeights:
    """Stacking solution: free intercept plus one nonnegative weight per
    ensemble member, keyed by study id."""

    intercept: float
    weights: dict[str, float]

    def __post_init__(self):
        self.intercept = float(self.intercept)
        for sid, w in self.weights.items():
            if w < 0.0:
                raise ValueError(f"negative weight {w!r} for study {sid!r}")
        self.weights = {sid: float(w) for sid, w in self.weights.items()}

    def as_array(self, ids=None) -> np.ndarray:
        ids = list(self.weights) if ids is None else list(ids)
        return np.array([self.weights[sid] for sid in ids], dtype=float)


@dataclasses.dataclass
class CoefficientMatrix:
    """Per-study coefficient columns, one column per study id."""

    ids: tuple
    values: np.ndarray  # shape (p + 1, K), intercept row first

    def __post_init__(self):
        self.ids = tuple(self.ids)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.ids):
            raise ValueError("coefficient matrix shape does not match ids")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate study ids")

    def column(self, sid: str) -> np.ndarray:
        return self.values[:, self.ids.index(sid)]


def fit_standardizer(studies) -> Standardizer:
    """Pooled mean and sample standard deviation of every covariate column
    across all rows of all given studies.

    Raises ValueError naming the offending column if any pooled column has
    zero variance.
    """
    if not studies:
        raise ValueError("no studies given")
    pooled = np.vstack([s.X_raw for s in studies])
    if pooled.shape[0] < 2:
        raise ValueError("need at least 2 pooled rows to standardize")
    means = pooled.mean(axis=0)
    sds = pooled.std(axis=0, ddof=1)
    for j, sd in enumerate(sds):
        if sd == 0.0:
            raise ValueError(f"covariate column x{j + 1} has zero pooled variance")
    return Standardizer(means=means, sds=sds)


def build_design(data, standardizer: Standardizer | None = None) -> np.ndarray:
    """Design matrix [1 | X] from a Study or a raw covariate array,
    standardizing first when a standardizer is given."""
    X = data.X_raw if isinstance(data, Study) else np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ValueError("covariates must be 2-d")
    if standardizer is not None:
        X = standardizer.transform(X)
    return np.column_stack([np.ones(X.shape[0]), X])


def intercept_free_mask(m: int) -> np.ndarray:
    """Diagonal of the penalty matrix: intercept unpenalized, rest penalized."""
    mask = np.ones(m)
    mask[0] = 0.0
    return mask


def ridge_fit(design, y, lam, mask=None, scale=None) -> np.ndarray:
    """Minimize (1/(2*scale))||y - X b||^2 + (lam/2)||D b||^2.

    Parameters
    ----------
    design : ndarray, shape (n, m)
        Design matrix, leading intercept column.
    y : ndarray, shape (n,)
    lam : float
        Penalty level, >= 0.
    mask : ndarray, shape (m,), optional
        Diagonal of D. Defaults to the intercept-free mask.
    scale : float, optional
        Loss scaling; defaults to n so the loss is a half mean square.

    Solved through the regularized normal equations with a Cholesky
    factorization plus one iterative refinement step. With lam = 0 and a
    rank-deficient design the minimum-norm solution is returned and a
    RankDeficiencyWarning is issued.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2 or design.shape[0] != y.shape[0]:
        raise ValueError("design and outcome shapes do not match")
    if lam < 0.0:
        raise ValueError("lam must be >= 0")
    n, m = design.shape
    if scale is None:
        scale = float(n)
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    if mask is None:
        mask = intercept_free_mask(m)
    else:
        mask = np.asarray(mask, dtype=float)
        if mask.shape != (m,):
            raise ValueError("mask length does not match design columns")
    h = design.T @ design / scale
    h[np.diag_indices_from(h)] += lam * mask
    rhs = design.T @ y / scale
    try:
        fac = scipy.linalg.cho_factor(h, check_finite=False)
        beta = scipy.linalg.cho_solve(fac, rhs, check_finite=False)
        # one refinement step keeps the stationarity residual near eps
        beta += scipy.linalg.cho_solve(fac, rhs - h @ beta, check_finite=False)
    except scipy.linalg.LinAlgError:
        beta = np.linalg.lstsq(h, rhs, rcond=None)[0]
        warnings.warn("singular system, returning minimum-norm solution",
                      RankDeficiencyWarning, stacklevel=2)
    return beta


def nnls_fit(design, y, mu=0.0, ids=None, tol=1e-10,
             max_sweeps=10000) -> EnsembleWeights:
    """Minimize (1/(2n))||y - a0*1 - Z a||^2 + (mu/2)||a||^2, a >= 0, a0 free.

    ``design`` is [1 | Z] with a leading ones column; the intercept is
    structurally unpenalized. Solved by cyclic coordinate descent with
    clamping at zero and an exact intercept update; a sweep whose largest
    coordinate change is below ``tol`` stops the solve.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2 or design.shape[0] != y.shape[0]:
        raise ValueError("design and outcome shapes do not match")
    if not np.all(design[:, 0] == 1.0):
        raise ValueError("design must start with a ones column")
    if mu < 0.0:
        raise ValueError("mu must be >= 0")
    z = design[:, 1:]
    n, k = z.shape
    if ids is None:
        ids = tuple(str(j) for j in range(k))
    else:
        ids = tuple(ids)
        if len(ids) != k:
            raise ValueError("ids length does not match member columns")
    a0, a, _ = _kernels.nnls_gram(
        np.ascontiguousarray(z.T @ z), z.T @ y, z.sum(axis=0),
        float(y.sum()), float(n), float(mu),
        0.0, np.zeros(k), tol, max_sweeps)
    return EnsembleWeights(intercept=a0, weights=dict(zip(ids, a)))


def predict(design, beta) -> np.ndarray:
    """Linear predictions design @ beta with a shape check."""
    design = np.asarray(design, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if design.ndim != 2 or design.shape[1] != beta.shape[0]:
        raise ValueError("design and coefficient shapes do not match")
    return design @ beta


def rmse(pred, truth) -> float:
    """Root mean squared error between two equal-length vectors."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))
