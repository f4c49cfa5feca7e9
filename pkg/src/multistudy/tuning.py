"""Fold construction and grid search for hyperparameter tuning.

Four fold schemes cover the tuning protocols used by the experiment
pipelines: within-study folds for per-study penalties and specialist
mixing, study-balanced folds for ensemble-level penalties, hold-one-study-
out folds for the merged fit's penalty, and forward-chaining time blocks
for time-ordered target data.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .core import Study, rmse

WITHIN_STUDY = "within-study"
STUDY_BALANCED = "study-balanced"
HOLD_ONE_STUDY_OUT = "hold-one-study-out"
TIME_SERIES = "time-series"

_SCHEMES = (WITHIN_STUDY, STUDY_BALANCED, HOLD_ONE_STUDY_OUT, TIME_SERIES)

ETA_GRID_DEFAULT = tuple([0.01] + [round(0.05 * i, 2) for i in range(1, 20)]
                         + [0.99])
PENALTY_GRID_DEFAULT = tuple(np.logspace(-4, 2, 8))


@dataclasses.dataclass(frozen=True)
class FoldPlan:
    """Train/validation splits over (study id, row) addresses."""

    scheme: str
    assignments: tuple  # of (train addresses, validation addresses) pairs

    def __post_init__(self):
        for train, val in self.assignments:
            if set(train) & set(val):
                raise ValueError("train and validation overlap within a fold")


@dataclasses.dataclass(frozen=True)
class Grid:
    """Ordered candidate values for one named parameter."""

    parameter: str
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ValueError("empty grid")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("grid values must be strictly increasing")


def _split_rows(rng, n, n_folds, shuffle=True):
    if n < n_folds:
        raise ValueError(f"{n} rows is fewer than {n_folds} folds")
    rows = rng.permutation(n) if shuffle else np.arange(n)
    return [np.sort(part) for part in np.array_split(rows, n_folds)]


def make_folds(studies, scheme, n_folds, seed=0) -> FoldPlan:
    """Build a fold plan.

    within-study: one study only, rows split at random into near-equal
    parts. study-balanced: every study's rows split so each fold validates
    on about 1/n_folds of each study. hold-one-study-out: fold k validates
    on all of study k (n_folds is forced to the study count). time-series:
    one study whose rows are in time order; fold i trains on the first i
    blocks and validates on block i+1, so validation is always strictly
    later than training.
    """
    studies = list(studies)
    if scheme not in _SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if not studies:
        raise ValueError("no studies given")
    rng = np.random.default_rng(seed)
    folds = []

    if scheme == HOLD_ONE_STUDY_OUT:
        if len(studies) < 2:
            raise ValueError("hold-one-study-out needs at least 2 studies")
        for held in studies:
            val = tuple((held.id, int(r)) for r in range(held.n))
            train = tuple((s.id, int(r)) for s in studies if s.id != held.id
                          for r in range(s.n))
            folds.append((train, val))
        return FoldPlan(scheme=scheme, assignments=tuple(folds))

    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")

    if scheme == WITHIN_STUDY:
        if len(studies) != 1:
            raise ValueError("within-study folds take exactly one study")
        s = studies[0]
        parts = _split_rows(rng, s.n, n_folds)
        for i in range(n_folds):
            val = tuple((s.id, int(r)) for r in parts[i])
            train = tuple((s.id, int(r))
                          for j in range(n_folds) if j != i
                          for r in parts[j])
            folds.append((train, val))
        return FoldPlan(scheme=scheme, assignments=tuple(folds))

    if scheme == STUDY_BALANCED:
        per_study = {s.id: _split_rows(rng, s.n, n_folds) for s in studies}
        for i in range(n_folds):
            val = tuple((s.id, int(r)) for s in studies
                        for r in per_study[s.id][i])
            train = tuple((s.id, int(r)) for s in studies
                          for j in range(n_folds) if j != i
                          for r in per_study[s.id][j])
            folds.append((train, val))
        return FoldPlan(scheme=scheme, assignments=tuple(folds))

    # time-series: contiguous forward-chaining blocks, no shuffling
    if len(studies) != 1:
        raise ValueError("time-series folds take exactly one study")
    s = studies[0]
    if s.n < n_folds + 1:
        raise ValueError(f"{s.n} rows is fewer than {n_folds + 1} blocks")
    blocks = np.array_split(np.arange(s.n), n_folds + 1)
    for i in range(1, n_folds + 1):
        train = tuple((s.id, int(r)) for b in blocks[:i] for r in b)
        val = tuple((s.id, int(r)) for r in blocks[i])
        folds.append((train, val))
    return FoldPlan(scheme=scheme, assignments=tuple(folds))


def subset_studies(studies, addresses):
    """New Study objects holding only the addressed rows (ascending row
    order within each study); studies left with no rows are dropped."""
    by_id = {s.id: s for s in studies}
    rows: dict[str, list[int]] = {}
    for sid, r in addresses:
        rows.setdefault(sid, []).append(r)
    out = []
    for s in studies:
        if s.id in rows:
            idx = np.array(sorted(rows[s.id]), dtype=int)
            out.append(Study(s.id, by_id[s.id].y[idx], by_id[s.id].X_raw[idx]))
    return out


def gather_rows(studies, addresses):
    """Covariates and outcomes for the addressed rows, study order first."""
    by_id = {s.id: s for s in studies}
    rows: dict[str, list[int]] = {}
    for sid, r in addresses:
        rows.setdefault(sid, []).append(r)
    xs, ys = [], []
    for s in studies:
        if s.id in rows:
            idx = np.array(sorted(rows[s.id]), dtype=int)
            xs.append(s.X_raw[idx])
            ys.append(s.y[idx])
    return np.vstack(xs), np.concatenate(ys)


def tune_parameter(studies, method_factory, grid: Grid, fold_plan: FoldPlan):
    """Grid search: fit on each fold's train portion, score RMSE on its
    validation portion, return the value with the lowest mean validation
    RMSE (first grid value on exact ties) plus the full CV table.

    ``method_factory(value)`` must return a fit function mapping a list of
    training studies to a predictor ``X_raw -> predictions``.
    """
    studies = list(studies)
    table = []
    means = []
    for value in grid.values:
        errs = []
        for fold_idx, (train_addr, val_addr) in enumerate(fold_plan.assignments):
            try:
                predictor = method_factory(value)(
                    subset_studies(studies, train_addr))
                x_val, y_val = gather_rows(studies, val_addr)
                err = rmse(predictor(x_val), y_val)
            except Exception as exc:
                raise RuntimeError(
                    f"tuning {grid.parameter}={value} failed on fold "
                    f"{fold_idx}: {exc}") from exc
            errs.append(err)
            table.append({"parameter": grid.parameter, "value": value,
                          "fold": fold_idx, "rmse": err})
        means.append(float(np.mean(errs)))
    best = grid.values[int(np.argmin(means))]
    return best, table
