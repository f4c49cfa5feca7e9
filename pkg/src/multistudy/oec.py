"""Joint ensemble construction: simultaneous block descent on the member
coefficients and the stacking weights.

The objective blends the stacking loss and the per-study fitting losses:

    eta * [ (1/(2s))||y_e - a0 - sum_k a_k X_e b_k||^2 + (mu/2)||a||^2 ]
    + (1-eta) * sum_k [ (1/(2 n_k))||y_k - X_k b_k||^2 + (lam_k/2)||D b_k||^2 ]

with a >= 0 and a0 free. The stacking rows (X_e, y_e, s) are every study's
rows for the generalist flavor and the target study's rows for the
specialist flavors; the member sum runs over all studies except that the
no-reuse specialist drops the target. Small eta recovers plain stacking,
large eta recovers the merged fit (generalist) or the target-only fit
(specialists).

The problem is bilinear, hence non-convex; block descent from the stacking
warm start gives a monotone objective trace. Each coefficient block has a
closed-form penalized solve, and the weight block is the same nonnegative
regression used for stacking.
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np
import scipy.linalg

from . import _kernels
from ._kernels import pure as _pure
from .core import (
    CoefficientMatrix,
    EnsembleWeights,
    RankDeficiencyWarning,
    Standardizer,
    build_design,
    fit_standardizer,
    intercept_free_mask,
    nnls_fit,
)
from .stacking import (
    Variant,
    _lambda_for,
    _target_study,
    ensemble_predict,
    member_studies,
    mss_fit,
)


@dataclasses.dataclass
class OecConfig:
    """Settings for a joint fit.

    eta must lie strictly inside (0, 1); the endpoints are the plain
    stacking and merged/target-only fits, which have their own entry points.
    ``init`` is an optional (coefficients, weights) warm start; by default
    the fit starts from the stacking solution.
    """

    variant: Variant
    eta: float
    mu: float = 0.0
    lambdas: object = 0.0
    tol: float = 1e-8
    max_iter: int = 1000
    init: tuple | None = None

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"eta must be in the open interval (0, 1), "
                             f"got {self.eta!r}")
        if self.mu < 0.0:
            raise ValueError("mu must be >= 0")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclasses.dataclass
class OecModel:
    """Fitted joint ensemble."""

    coefficients: CoefficientMatrix
    weights: EnsembleWeights
    variant: Variant
    standardizer: Standardizer
    eta: float
    mu: float
    lambdas: dict
    objective_trace: np.ndarray
    converged: bool
    tol: float = 1e-8

    @property
    def iterations(self) -> int:
        return len(self.objective_trace) - 1


def _ensemble_rows(studies, variant: Variant):
    if variant.is_specialist:
        return [_target_study(studies, variant)]
    return list(studies)


def _member_order(studies, coefficients, variant):
    members = member_studies(studies, variant)
    by_id = {s.id: s for s in members}
    if set(coefficients.ids) != set(by_id):
        raise ValueError("coefficient ids do not match the member studies")
    return [by_id[sid] for sid in coefficients.ids]


def oec_objective(config: OecConfig, studies, coefficients: CoefficientMatrix,
                  weights: EnsembleWeights,
                  standardizer: Standardizer | None = None) -> float:
    """Objective value at the given blocks, computed term by term on the
    (optionally standardized) designs."""
    studies = list(studies)
    members = _member_order(studies, coefficients, config.variant)
    a = weights.as_array(coefficients.ids)
    rows = _ensemble_rows(studies, config.variant)
    design_e = np.vstack([build_design(s, standardizer) for s in rows])
    y_e = np.concatenate([s.y for s in rows])
    s_rows = float(len(y_e))
    resid = y_e - weights.intercept - (design_e @ coefficients.values) @ a
    val = config.eta * (resid @ resid / (2.0 * s_rows)
                        + 0.5 * config.mu * (a @ a))
    mask = intercept_free_mask(coefficients.values.shape[0])
    for s, sid in zip(members, coefficients.ids):
        b = coefficients.column(sid)
        rk = s.y - build_design(s, standardizer) @ b
        lam = _lambda_for(config.lambdas, sid)
        val += (1.0 - config.eta) * (
            rk @ rk / (2.0 * s.n) + 0.5 * lam * np.sum(mask * b * b))
    return float(val)


def update_beta_block(config: OecConfig, studies,
                      coefficients: CoefficientMatrix,
                      weights: EnsembleWeights, member_id: str,
                      standardizer: Standardizer | None = None) -> np.ndarray:
    """Exact minimizer of the objective over one member's coefficient column
    with every other block held fixed."""
    studies = list(studies)
    members = _member_order(studies, coefficients, config.variant)
    k = coefficients.ids.index(member_id)
    study_k = members[k]
    a = weights.as_array(coefficients.ids)
    rows = _ensemble_rows(studies, config.variant)
    design_e = np.vstack([build_design(s, standardizer) for s in rows])
    y_e = np.concatenate([s.y for s in rows])
    s_rows = float(len(y_e))
    design_k = build_design(study_k, standardizer)
    m = coefficients.values.shape[0]
    mask = intercept_free_mask(m)
    lam = _lambda_for(config.lambdas, member_id)
    eta, ak = config.eta, a[k]

    h = (eta * (ak * ak / s_rows) * (design_e.T @ design_e)
         + (1.0 - eta) / study_k.n * (design_k.T @ design_k))
    h[np.diag_indices_from(h)] += (1.0 - eta) * lam * mask
    others = coefficients.values @ a - ak * coefficients.values[:, k]
    partial_resid = y_e - weights.intercept - design_e @ others
    rhs = (eta * (ak / s_rows) * (design_e.T @ partial_resid)
           + (1.0 - eta) / study_k.n * (design_k.T @ study_k.y))
    try:
        fac = scipy.linalg.cho_factor(h, check_finite=False)
        beta = scipy.linalg.cho_solve(fac, rhs, check_finite=False)
        beta += scipy.linalg.cho_solve(fac, rhs - h @ beta, check_finite=False)
    except scipy.linalg.LinAlgError:
        beta = np.linalg.lstsq(h, rhs, rcond=None)[0]
        warnings.warn("singular coefficient block, returning minimum-norm "
                      "update", RankDeficiencyWarning, stacklevel=2)
    return beta


def update_alpha_block(config: OecConfig, studies,
                       coefficients: CoefficientMatrix,
                       standardizer: Standardizer | None = None
                       ) -> EnsembleWeights:
    """Exact minimizer over the weight block: the nonnegative stacking
    regression on the current member predictions. The eta factor scales the
    whole block objective, so the penalty is mu unchanged."""
    studies = list(studies)
    _member_order(studies, coefficients, config.variant)
    rows = _ensemble_rows(studies, config.variant)
    design_e = np.vstack([build_design(s, standardizer) for s in rows])
    y_e = np.concatenate([s.y for s in rows])
    member_preds = design_e @ coefficients.values
    design = np.column_stack([np.ones(member_preds.shape[0]), member_preds])
    return nnls_fit(design, y_e, mu=config.mu, ids=coefficients.ids)


def oec_fit(config: OecConfig, studies) -> OecModel:
    """Block descent on the joint objective.

    Starts from the stacking fit (or ``config.init``), cycles an exact solve
    per member coefficient column followed by a full weight update, records
    the objective after every cycle, and stops when the relative objective
    change drops below ``config.tol`` or after ``config.max_iter`` cycles.
    """
    studies = list(studies)
    members = member_studies(studies, config.variant)
    standardizer = fit_standardizer(members)

    if config.init is None:
        warm = mss_fit(studies, config.variant, config.lambdas, config.mu)
        b_init, w_init = warm.coefficients, warm.weights
        if all(v == 0.0 for v in w_init.weights.values()):
            # an all-zero weight start is a stationary point of the
            # coupled descent (no gradient reaches the coefficient
            # blocks), so start from equal weights instead
            k = len(w_init.weights)
            w_init = EnsembleWeights(w_init.intercept,
                                     {sid: 1.0 / k for sid in w_init.weights})
    else:
        b_init, w_init = config.init
        if set(b_init.ids) != {s.id for s in members}:
            raise ValueError("init coefficient ids do not match the member "
                             "studies")
    member_ids = tuple(b_init.ids)
    order = {s.id: s for s in members}
    members = [order[sid] for sid in member_ids]

    designs = [build_design(s, standardizer) for s in members]
    rows = _ensemble_rows(studies, config.variant)
    design_e = np.vstack([build_design(s, standardizer) for s in rows])
    y_e = np.concatenate([s.y for s in rows])
    s_rows = float(len(y_e))
    m = design_e.shape[1]

    ge = np.ascontiguousarray(design_e.T @ design_e)
    ce = design_e.T @ y_e
    he = design_e.sum(axis=0)
    gks = np.ascontiguousarray(
        np.stack([d.T @ d for d in designs]))
    cks = np.ascontiguousarray(
        np.stack([d.T @ s.y for d, s in zip(designs, members)]))
    ns = np.array([float(s.n) for s in members])
    lams = np.array([_lambda_for(config.lambdas, sid) for sid in member_ids])
    yss_ks = np.array([float(s.y @ s.y) for s in members])
    mask = intercept_free_mask(m)

    args = (config.eta, config.mu, s_rows, ge, ce, he,
            float(y_e.sum()), float(y_e @ y_e),
            gks, cks, ns, lams, yss_ks, mask,
            b_init.values, w_init.intercept, w_init.as_array(member_ids),
            config.tol, config.max_iter, 1e-10, 10000)
    try:
        b, a0, a, trace, converged, n_fallback = _kernels.bcd_fit(*args)
    except _kernels.SingularBlockError:
        b, a0, a, trace, converged, n_fallback = _pure.bcd_fit(*args)
    if n_fallback:
        warnings.warn(f"{n_fallback} coefficient solves hit a singular "
                      "system and used minimum-norm updates",
                      RankDeficiencyWarning, stacklevel=2)

    lam_map = {sid: float(lam) for sid, lam in zip(member_ids, lams)}
    return OecModel(
        coefficients=CoefficientMatrix(ids=member_ids, values=b),
        weights=EnsembleWeights(intercept=a0,
                                weights=dict(zip(member_ids, a))),
        variant=config.variant, standardizer=standardizer,
        eta=config.eta, mu=config.mu, lambdas=lam_map,
        objective_trace=np.asarray(trace), converged=bool(converged),
        tol=config.tol)


def oec_predict(model: OecModel, X_new: np.ndarray) -> np.ndarray:
    """Ensemble predictions on new covariate rows (raw scale)."""
    return ensemble_predict(model.coefficients, model.weights,
                            model.standardizer, X_new)
