"""Method registry and the hyperparameter tuning protocol shared by the
simulation and mortality pipelines.

Method names: ssm, tom, mss-g, mss-s, mss-sn, oec-g, oec-s, oec-sn.
Generalist methods (tom, mss-g, oec-g) are fit on the training studies
only; specialist methods and ssm additionally see the target study's
training rows.

Tuning order: per-study ridge penalties first (within-study folds, shared
by every method), then the stacking penalty (study-balanced folds), then
the joint method's weight penalty (study-balanced folds via the generalist
joint fit), then the mixing weight per joint variant, and last the merged
fit's penalty (hold-one-study-out folds).
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .core import Study, fit_standardizer
from .oec import OecConfig, oec_fit, oec_predict
from .stacking import (
    Variant,
    linear_predict,
    mss_fit,
    mss_predict,
    ssm_fit,
    tom_fit,
)
from .tuning import (
    ETA_GRID_DEFAULT,
    HOLD_ONE_STUDY_OUT,
    PENALTY_GRID_DEFAULT,
    STUDY_BALANCED,
    WITHIN_STUDY,
    FoldPlan,
    Grid,
    make_folds,
    tune_parameter,
)

METHOD_NAMES = ("ssm", "tom", "mss-g", "mss-s", "mss-sn",
                "oec-g", "oec-s", "oec-sn")
GENERALIST_METHODS = ("tom", "mss-g", "oec-g")
MSS_COUNTERPART = {"oec-g": "mss-g", "oec-s": "mss-s", "oec-sn": "mss-sn"}


@dataclasses.dataclass
class TuningPlan:
    """Which hyperparameters to tune and on what grids.

    A ``None`` grid pins the parameter: penalties default to 0, the joint
    weight penalty falls back to the tuned stacking penalty, the merged
    penalty falls back to 0. ``n_folds=None`` uses the number of studies.
    ``specialist_fold_scheme`` controls how the target study's rows are
    split when tuning the specialist mixing weight (time-series blocks for
    time-ordered data, random folds otherwise).
    """

    lambda_grid: tuple | None = PENALTY_GRID_DEFAULT
    stack_mu_grid: tuple | None = PENALTY_GRID_DEFAULT
    oec_mu_grid: tuple | None = PENALTY_GRID_DEFAULT
    eta_grid: tuple = ETA_GRID_DEFAULT
    tom_lambda_grid: tuple | None = PENALTY_GRID_DEFAULT
    n_folds: int | None = None
    specialist_fold_scheme: str = WITHIN_STUDY
    seed: int = 0
    # iteration cap for joint fits inside fold evaluations only; final
    # fits always run at full depth
    cv_max_iter: int | None = None

    @classmethod
    def none(cls, eta_grid=ETA_GRID_DEFAULT, **kw) -> "TuningPlan":
        """No penalty tuning at all; only the mixing weight is searched."""
        return cls(lambda_grid=None, stack_mu_grid=None, oec_mu_grid=None,
                   tom_lambda_grid=None, eta_grid=tuple(eta_grid), **kw)


def default_experiment_plan(**kw) -> "TuningPlan":
    """Experiment protocol without per-study penalties: the stacking and
    joint weight penalties and the mixing weight are tuned, individual
    study fits stay unpenalized."""
    kw.setdefault("lambda_grid", None)
    return TuningPlan(**kw)


@dataclasses.dataclass
class Hyperparams:
    lambdas: dict
    stack_mu: float = 0.0
    oec_mu: float = 0.0
    etas: dict = dataclasses.field(default_factory=dict)
    tom_lambda: float = 0.0
    # full CV table across every grid searched, rows
    # {parameter, value, fold, rmse}
    cv_records: list = dataclasses.field(default_factory=list)


def variant_for(name: str, target_id: str | None) -> Variant:
    if name.endswith("-g"):
        return Variant.generalist()
    if target_id is None:
        raise ValueError(f"method {name!r} requires a target study")
    if name.endswith("-sn"):
        return Variant.specialist_noreuse(target_id)
    return Variant.specialist(target_id)


def _single_ridge_factory(lam):
    def fit(train_studies):
        (s,) = train_studies
        std = fit_standardizer([s])
        beta = ssm_fit(s, lam, std)
        return lambda x_raw: linear_predict(beta, x_raw, std)
    return fit


def specialist_fold_plan(studies, target_id, scheme, n_folds, seed) -> FoldPlan:
    """Folds that split only the target study's rows; every fold trains on
    the full rows of all other studies plus the target's train portion."""
    target = next(s for s in studies if s.id == target_id)
    base = make_folds([target], scheme, n_folds, seed)
    others = tuple((s.id, int(r)) for s in studies if s.id != target_id
                   for r in range(s.n))
    assignments = tuple((train + others, val)
                        for train, val in base.assignments)
    return FoldPlan(scheme=base.scheme, assignments=assignments)


def tune_hyperparameters(train_studies, target: Study | None,
                         plan: TuningPlan, methods) -> Hyperparams:
    """Run the tuning protocol for the requested methods.

    ``train_studies`` are the non-target studies; ``target`` may be None
    when only generalist methods are requested.
    """
    train_studies = list(train_studies)
    everyone = train_studies + ([target] if target is not None else [])
    # fold count follows the number of training studies, target excluded
    nf = plan.n_folds if plan.n_folds is not None else max(2, len(train_studies))

    hp = Hyperparams(lambdas={s.id: 0.0 for s in everyone})
    if plan.lambda_grid is not None:
        for s in everyone:
            grid = Grid(f"lambda[{s.id}]", plan.lambda_grid)
            fp = make_folds([s], WITHIN_STUDY, min(nf, s.n), plan.seed)
            best, table = tune_parameter([s], _single_ridge_factory, grid, fp)
            hp.lambdas[s.id] = best
            hp.cv_records += table

    def mss_g_factory(mu):
        def fit(subset):
            model = mss_fit(subset, Variant.generalist(), hp.lambdas, mu)
            return lambda x_raw: mss_predict(model, x_raw)
        return fit

    if plan.stack_mu_grid is not None and len(train_studies) >= 1:
        fp = make_folds(train_studies, STUDY_BALANCED,
                        min(nf, min(s.n for s in train_studies)), plan.seed)
        hp.stack_mu, table = tune_parameter(
            train_studies, mss_g_factory, Grid("stack_mu", plan.stack_mu_grid), fp)
        hp.cv_records += table

    wants_oec = any(m.startswith("oec-") for m in methods)
    if wants_oec:
        if plan.oec_mu_grid is not None:
            def oec_g_factory(mu):
                def fit(subset):
                    model = oec_fit(OecConfig(Variant.generalist(), eta=0.5,
                                              mu=mu, lambdas=hp.lambdas,
                                              max_iter=plan.cv_max_iter
                                              or 1000),
                                    subset)
                    return lambda x_raw: oec_predict(model, x_raw)
                return fit
            fp = make_folds(train_studies, STUDY_BALANCED,
                            min(nf, min(s.n for s in train_studies)),
                            plan.seed)
            hp.oec_mu, table = tune_parameter(
                train_studies, oec_g_factory, Grid("oec_mu", plan.oec_mu_grid),
                fp)
            hp.cv_records += table
        else:
            hp.oec_mu = hp.stack_mu

    def oec_factory(variant):
        def factory(eta):
            def fit(subset):
                return fit_method_at_eta(variant, eta, hp, subset,
                                         max_iter=plan.cv_max_iter)
            return fit
        return factory

    for name in methods:
        if not name.startswith("oec-"):
            continue
        eta_grid = Grid(f"eta[{name}]", plan.eta_grid)
        if name == "oec-g":
            fp = make_folds(train_studies, STUDY_BALANCED,
                            min(nf, min(s.n for s in train_studies)),
                            plan.seed)
            hp.etas[name], table = tune_parameter(
                train_studies, oec_factory(Variant.generalist()),
                eta_grid, fp)
        else:
            if target is None:
                raise ValueError(f"method {name!r} requires a target study")
            variant = variant_for(name, target.id)
            fp = specialist_fold_plan(everyone, target.id,
                                      plan.specialist_fold_scheme,
                                      min(nf, target.n), plan.seed)
            hp.etas[name], table = tune_parameter(
                everyone, oec_factory(variant), eta_grid, fp)
        hp.cv_records += table

    if (plan.tom_lambda_grid is not None and "tom" in methods
            and len(train_studies) >= 2):
        def tom_factory(lam):
            def fit(subset):
                std = fit_standardizer(subset)
                beta = tom_fit(subset, lam, std)
                return lambda x_raw: linear_predict(beta, x_raw, std)
            return fit
        fp = make_folds(train_studies, HOLD_ONE_STUDY_OUT, nf, plan.seed)
        hp.tom_lambda, table = tune_parameter(
            train_studies, tom_factory, Grid("tom_lambda", plan.tom_lambda_grid),
            fp)
        hp.cv_records += table

    return hp


def fit_method_at_eta(variant: Variant, eta: float, hp: Hyperparams, studies,
                      max_iter: int | None = None):
    """Joint fit at one mixing weight, dispatching the endpoints to the
    fits they degenerate to."""
    if eta <= 0.0:
        model = mss_fit(studies, variant, hp.lambdas, hp.oec_mu)
        return lambda x_raw: mss_predict(model, x_raw)
    if eta >= 1.0:
        if variant.is_specialist:
            target = next(s for s in studies if s.id == variant.target_id)
            std = fit_standardizer([target])
            beta = ssm_fit(target, hp.lambdas.get(target.id, 0.0), std)
            return lambda x_raw: linear_predict(beta, x_raw, std)
        std = fit_standardizer(studies)
        beta = tom_fit(studies, hp.tom_lambda, std)
        return lambda x_raw: linear_predict(beta, x_raw, std)
    model = oec_fit(OecConfig(variant, eta=eta, mu=hp.oec_mu,
                              lambdas=hp.lambdas,
                              max_iter=max_iter if max_iter is not None
                              else 1000),
                    studies)
    return lambda x_raw: oec_predict(model, x_raw)


def fit_method(name: str, train_studies, target: Study | None,
               hp: Hyperparams):
    """Fit one named method; returns a predictor ``X_raw -> predictions``."""
    if name not in METHOD_NAMES:
        raise ValueError(f"unknown method {name!r}")
    if name == "ssm":
        if target is None:
            raise ValueError("ssm requires a target study")
        std = fit_standardizer([target])
        beta = ssm_fit(target, hp.lambdas.get(target.id, 0.0), std)
        return lambda x_raw: linear_predict(beta, x_raw, std)
    if name == "tom":
        std = fit_standardizer(train_studies)
        beta = tom_fit(train_studies, hp.tom_lambda, std)
        return lambda x_raw: linear_predict(beta, x_raw, std)

    if name in GENERALIST_METHODS:
        studies = list(train_studies)
        variant = Variant.generalist()
    else:
        if target is None:
            raise ValueError(f"method {name!r} requires a target study")
        studies = list(train_studies) + [target]
        variant = variant_for(name, target.id)

    if name.startswith("mss-"):
        model = mss_fit(studies, variant, hp.lambdas, hp.stack_mu)
        return lambda x_raw: mss_predict(model, x_raw)
    eta = hp.etas.get(name)
    if eta is None:
        raise ValueError(f"no mixing weight tuned or given for {name!r}")
    return fit_method_at_eta(variant, eta, hp, studies)
