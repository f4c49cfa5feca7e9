"""Multi-study stacking: per-study ridge fits combined by a nonnegative
stacking regression, with merged and single-study baselines.

Three ensemble flavors:

* generalist: stack on every study's rows, for prediction on new studies;
* specialist: stack on one target study's rows, its own fit included;
* specialist without data reuse: stack on the target's rows but the target
  contributes no member fit, so no quantity reuses the target outcomes on
  both stages.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .core import (
    CoefficientMatrix,
    EnsembleWeights,
    Standardizer,
    Study,
    build_design,
    fit_standardizer,
    nnls_fit,
    predict,
    ridge_fit,
)

GENERALIST = "generalist"
SPECIALIST = "specialist"
SPECIALIST_NOREUSE = "specialist-noreuse"


@dataclasses.dataclass(frozen=True)
class Variant:
    """Which stacking flavor to fit, and for the specialist flavors, which
    study is the target."""

    kind: str
    target_id: str | None = None

    def __post_init__(self):
        if self.kind not in (GENERALIST, SPECIALIST, SPECIALIST_NOREUSE):
            raise ValueError(f"unknown variant kind {self.kind!r}")
        if self.kind == GENERALIST and self.target_id is not None:
            raise ValueError("generalist variant takes no target")
        if self.kind != GENERALIST and self.target_id is None:
            raise ValueError(f"{self.kind} variant requires a target id")

    @classmethod
    def generalist(cls) -> "Variant":
        return cls(GENERALIST)

    @classmethod
    def specialist(cls, target_id: str) -> "Variant":
        return cls(SPECIALIST, target_id)

    @classmethod
    def specialist_noreuse(cls, target_id: str) -> "Variant":
        return cls(SPECIALIST_NOREUSE, target_id)

    @property
    def is_specialist(self) -> bool:
        return self.kind != GENERALIST


@dataclasses.dataclass
class MssModel:
    """Fitted stacking ensemble."""

    coefficients: CoefficientMatrix
    weights: EnsembleWeights
    variant: Variant
    standardizer: Standardizer
    lambdas: dict
    mu: float


def _check_ids(studies) -> None:
    ids = [s.id for s in studies]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate study ids")


def _lambda_for(lambdas, sid: str) -> float:
    if isinstance(lambdas, dict):
        try:
            return float(lambdas[sid])
        except KeyError:
            raise ValueError(f"no penalty given for study {sid!r}") from None
    return float(lambdas)


def member_studies(studies, variant: Variant):
    """The studies contributing member fits under the given variant."""
    if variant.kind == SPECIALIST_NOREUSE:
        kept = [s for s in studies if s.id != variant.target_id]
        if len(kept) == len(studies):
            raise ValueError(f"target {variant.target_id!r} not in studies")
        if not kept:
            raise ValueError("no member studies left after removing target")
        return kept
    return list(studies)


def _target_study(studies, variant: Variant) -> Study:
    for s in studies:
        if s.id == variant.target_id:
            return s
    raise ValueError(f"target {variant.target_id!r} not in studies")


def fit_ssls(studies, lambdas, standardizer: Standardizer | None = None
             ) -> CoefficientMatrix:
    """Per-study ridge fits, one coefficient column per study.

    Each column solves (1/(2 n_k))||y_k - X_k b||^2 + (lam_k/2)||D b||^2 on
    that study's design. ``lambdas`` is a scalar or a dict keyed by study id.
    """
    if not studies:
        raise ValueError("no studies given")
    _check_ids(studies)
    cols = []
    for s in studies:
        design = build_design(s, standardizer)
        cols.append(ridge_fit(design, s.y, _lambda_for(lambdas, s.id),
                              scale=float(s.n)))
    return CoefficientMatrix(ids=tuple(s.id for s in studies),
                             values=np.column_stack(cols))


def build_stacked_matrix(coefficients: CoefficientMatrix, studies,
                         variant: Variant,
                         standardizer: Standardizer | None = None
                         ) -> np.ndarray:
    """Member-prediction matrix for the stacking regression.

    Generalist: one block row per study, columns are every member's
    predictions on that study. Specialist flavors: the target study's rows
    only. Column order follows ``coefficients.ids``.
    """
    if variant.is_specialist:
        rows = [_target_study(studies, variant)]
    else:
        rows = list(studies)
    blocks = [build_design(s, standardizer) @ coefficients.values
              for s in rows]
    return np.vstack(blocks)


def mss_fit(studies, variant: Variant, lambdas=0.0, mu: float = 0.0
            ) -> MssModel:
    """Two-stage stacking fit: per-study ridge members, then a nonnegative
    stacking regression with free intercept and penalty ``mu``."""
    studies = list(studies)
    _check_ids(studies)
    members = member_studies(studies, variant)
    if variant.is_specialist:
        _target_study(studies, variant)  # existence check for all flavors
    standardizer = fit_standardizer(members)
    coefficients = fit_ssls(members, lambdas, standardizer)
    stacked = build_stacked_matrix(coefficients, studies, variant,
                                   standardizer)
    if variant.is_specialist:
        outcome = _target_study(studies, variant).y
    else:
        outcome = np.concatenate([s.y for s in studies])
    design = np.column_stack([np.ones(stacked.shape[0]), stacked])
    weights = nnls_fit(design, outcome, mu=mu, ids=coefficients.ids)
    lam_map = {s.id: _lambda_for(lambdas, s.id) for s in members}
    return MssModel(coefficients=coefficients, weights=weights,
                    variant=variant, standardizer=standardizer,
                    lambdas=lam_map, mu=float(mu))


def tom_fit(studies, lam: float, standardizer: Standardizer | None = None
            ) -> np.ndarray:
    """Ridge fit on all studies' rows merged, loss scaled by the total row
    count."""
    studies = list(studies)
    if not studies:
        raise ValueError("no studies given")
    _check_ids(studies)
    design = np.vstack([build_design(s, standardizer) for s in studies])
    y = np.concatenate([s.y for s in studies])
    return ridge_fit(design, y, lam, scale=float(len(y)))


def ssm_fit(study: Study, lam: float,
            standardizer: Standardizer | None = None) -> np.ndarray:
    """Ridge fit on a single study, loss scaled by its row count."""
    return ridge_fit(build_design(study, standardizer), study.y, lam,
                     scale=float(study.n))


def ensemble_predict(coefficients: CoefficientMatrix,
                     weights: EnsembleWeights,
                     standardizer: Standardizer | None,
                     X_new: np.ndarray) -> np.ndarray:
    design = build_design(np.asarray(X_new, dtype=float), standardizer)
    member_preds = design @ coefficients.values
    return weights.intercept + member_preds @ weights.as_array(coefficients.ids)


def mss_predict(model: MssModel, X_new: np.ndarray) -> np.ndarray:
    """Ensemble predictions on new covariate rows (raw scale)."""
    return ensemble_predict(model.coefficients, model.weights,
                            model.standardizer, X_new)


def linear_predict(beta: np.ndarray, X_new: np.ndarray,
                   standardizer: Standardizer | None = None) -> np.ndarray:
    """Predictions for a bare coefficient vector (merged or single-study
    fits)."""
    return predict(build_design(np.asarray(X_new, dtype=float), standardizer),
                   beta)
