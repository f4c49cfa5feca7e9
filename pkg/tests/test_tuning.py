import numpy as np
import pytest

from multistudy import Study, build_design, fit_standardizer
from multistudy.core import ridge_fit, rmse
from multistudy.stacking import linear_predict
from multistudy.tuning import (
    ETA_GRID_DEFAULT,
    PENALTY_GRID_DEFAULT,
    FoldPlan,
    Grid,
    HOLD_ONE_STUDY_OUT,
    STUDY_BALANCED,
    TIME_SERIES,
    WITHIN_STUDY,
    gather_rows,
    make_folds,
    subset_studies,
    tune_parameter,
)


def make_studies(seed, K=3, n=12, p=2):
    rng = np.random.default_rng(seed)
    out = []
    for k in range(K):
        x = rng.standard_normal((n, p))
        y = rng.standard_normal(n)
        out.append(Study(f"s{k}", y, x))
    return out


def ridge_factory(lam):
    def fit(train_studies):
        std = fit_standardizer(train_studies)
        design = np.vstack([build_design(s, std) for s in train_studies])
        y = np.concatenate([s.y for s in train_studies])
        beta = ridge_fit(design, y, lam, scale=float(len(y)))
        return lambda x_raw: linear_predict(beta, x_raw, std)
    return fit


# ------------------------------------------------------------------- grids


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid("eta", [])
    with pytest.raises(ValueError):
        Grid("eta", [0.1, 0.1])
    with pytest.raises(ValueError):
        Grid("eta", [0.5, 0.1])
    assert Grid("mu", [1, 2, 3]).values == (1.0, 2.0, 3.0)


def test_default_grids():
    assert len(ETA_GRID_DEFAULT) == 21
    assert ETA_GRID_DEFAULT[0] == 0.01 and ETA_GRID_DEFAULT[-1] == 0.99
    assert ETA_GRID_DEFAULT[1] == 0.05 and ETA_GRID_DEFAULT[-2] == 0.95
    assert len(PENALTY_GRID_DEFAULT) == 8
    assert np.isclose(PENALTY_GRID_DEFAULT[0], 1e-4)
    assert np.isclose(PENALTY_GRID_DEFAULT[-1], 1e2)
    Grid("eta", ETA_GRID_DEFAULT)
    Grid("lambda", PENALTY_GRID_DEFAULT)


# ------------------------------------------------------------------- folds


def partition_check(plan, expected_addresses):
    seen = []
    for _, val in plan.assignments:
        seen.extend(val)
    assert sorted(seen) == sorted(expected_addresses)
    assert len(set(seen)) == len(seen)


def test_hold_one_study_out():
    studies = make_studies(0)
    plan = make_folds(studies, HOLD_ONE_STUDY_OUT, n_folds=99)
    assert len(plan.assignments) == 3
    val_ids = [set(sid for sid, _ in val) for _, val in plan.assignments]
    assert val_ids == [{"s0"}, {"s1"}, {"s2"}]
    for train, val in plan.assignments:
        held = next(iter(val))[0]
        assert all(sid != held for sid, _ in train)
        assert len(val) == 12


def test_study_balanced_equal_rows():
    studies = make_studies(1, K=2, n=10)
    plan = make_folds(studies, STUDY_BALANCED, n_folds=5, seed=3)
    assert len(plan.assignments) == 5
    for _, val in plan.assignments:
        per = {"s0": 0, "s1": 0}
        for sid, _ in val:
            per[sid] += 1
        assert per == {"s0": 2, "s1": 2}
    all_addresses = [(s.id, r) for s in studies for r in range(10)]
    partition_check(plan, all_addresses)


def test_within_study_partition():
    s = make_studies(2, K=1, n=11)[0]
    plan = make_folds([s], WITHIN_STUDY, n_folds=3, seed=7)
    partition_check(plan, [("s0", r) for r in range(11)])
    sizes = sorted(len(val) for _, val in plan.assignments)
    assert sizes == [3, 4, 4]


def test_within_study_needs_single_study():
    with pytest.raises(ValueError):
        make_folds(make_studies(3), WITHIN_STUDY, n_folds=3)


def test_fewer_rows_than_folds_errors():
    s = make_studies(4, K=1, n=4)[0]
    with pytest.raises(ValueError, match="fewer"):
        make_folds([s], WITHIN_STUDY, n_folds=5)


def test_time_series_validation_after_train():
    s = make_studies(5, K=1, n=20)[0]
    plan = make_folds([s], TIME_SERIES, n_folds=4)
    assert len(plan.assignments) == 4
    for train, val in plan.assignments:
        assert max(r for _, r in train) < min(r for _, r in val)
    # later folds extend the training window
    lens = [len(train) for train, _ in plan.assignments]
    assert lens == sorted(lens)


def test_no_leakage_all_schemes():
    studies = make_studies(6)
    plans = [
        make_folds(studies, HOLD_ONE_STUDY_OUT, 3),
        make_folds(studies, STUDY_BALANCED, 3, seed=1),
        make_folds([studies[0]], WITHIN_STUDY, 3, seed=1),
        make_folds([studies[0]], TIME_SERIES, 3),
    ]
    for plan in plans:
        for train, val in plan.assignments:
            assert not set(train) & set(val)


def test_fold_determinism():
    studies = make_studies(7)
    p1 = make_folds(studies, STUDY_BALANCED, 3, seed=42)
    p2 = make_folds(studies, STUDY_BALANCED, 3, seed=42)
    assert p1.assignments == p2.assignments
    p3 = make_folds(studies, STUDY_BALANCED, 3, seed=43)
    assert p1.assignments != p3.assignments


def test_foldplan_rejects_overlap():
    # one fold whose train and validation share the address ("a", 1)
    with pytest.raises(ValueError):
        FoldPlan("x", (((("a", 1),), (("a", 1),)),))


# --------------------------------------------------------- subset helpers


def test_subset_and_gather():
    studies = make_studies(8, K=2, n=6)
    addresses = [("s1", 3), ("s0", 1), ("s1", 0)]
    subs = subset_studies(studies, addresses)
    assert [s.id for s in subs] == ["s0", "s1"]
    assert subs[0].n == 1 and subs[1].n == 2
    assert np.array_equal(subs[1].y, studies[1].y[[0, 3]])
    x, y = gather_rows(studies, addresses)
    assert x.shape == (3, 2)
    assert np.array_equal(y, np.concatenate([studies[0].y[[1]],
                                             studies[1].y[[0, 3]]]))


# ---------------------------------------------------------- tune_parameter


def test_single_value_grid():
    studies = make_studies(9)
    plan = make_folds(studies, STUDY_BALANCED, 3, seed=0)
    best, table = tune_parameter(studies, ridge_factory,
                                 Grid("lambda", [0.7]), plan)
    assert best == 0.7
    assert len(table) == 3


def test_noiseless_problem_prefers_zero_penalty():
    rng = np.random.default_rng(10)
    beta = np.array([1.0, 2.0, -1.5])
    studies = []
    for k in range(2):
        x = rng.standard_normal((30, 2))
        studies.append(Study(f"s{k}", beta[0] + x @ beta[1:], x))
    plan = make_folds(studies, STUDY_BALANCED, 3, seed=0)
    best, _ = tune_parameter(studies, ridge_factory,
                             Grid("lambda", [0.0, 1.0, 10.0]), plan)
    assert best == 0.0


def test_cv_table_matches_hand_rolled_loop():
    studies = make_studies(11, K=2, n=8)
    plan = make_folds(studies, STUDY_BALANCED, 2, seed=5)
    grid = Grid("lambda", [0.1, 1.0])
    best, table = tune_parameter(studies, ridge_factory, grid, plan)

    expect_rows = []
    for value in grid.values:
        for fold_idx, (train_addr, val_addr) in enumerate(plan.assignments):
            predictor = ridge_factory(value)(
                subset_studies(studies, train_addr))
            x_val, y_val = gather_rows(studies, val_addr)
            expect_rows.append((value, fold_idx,
                                rmse(predictor(x_val), y_val)))
    assert len(table) == len(expect_rows)
    for row, (value, fold_idx, err) in zip(table, expect_rows):
        assert row["value"] == value
        assert row["fold"] == fold_idx
        assert np.isclose(row["rmse"], err, rtol=1e-12)
    means = {}
    for v, _, e in expect_rows:
        means.setdefault(v, []).append(e)
    expect_best = min(grid.values,
                      key=lambda v: (np.mean(means[v]), v))
    assert best == expect_best


def test_tune_deterministic():
    studies = make_studies(12)
    plan = make_folds(studies, STUDY_BALANCED, 3, seed=9)
    grid = Grid("lambda", [0.01, 0.1, 1.0])
    b1, t1 = tune_parameter(studies, ridge_factory, grid, plan)
    b2, t2 = tune_parameter(studies, ridge_factory, grid, plan)
    assert b1 == b2 and t1 == t2


def test_hold_one_study_out_order_invariance():
    studies = make_studies(13)
    grid = Grid("lambda", [0.05, 0.5])

    def mean_errors(study_list):
        plan = make_folds(study_list, HOLD_ONE_STUDY_OUT, 3)
        _, table = tune_parameter(study_list, ridge_factory, grid, plan)
        out = {}
        for row in table:
            out.setdefault(row["value"], []).append(row["rmse"])
        return {v: np.mean(e) for v, e in out.items()}

    m1 = mean_errors(studies)
    m2 = mean_errors(studies[::-1])
    for v in grid.values:
        assert np.isclose(m1[v], m2[v], rtol=1e-12)


def test_fold_error_context():
    studies = make_studies(14)
    plan = make_folds(studies, STUDY_BALANCED, 3, seed=0)

    def broken_factory(value):
        def fit(train_studies):
            raise ArithmeticError("boom")
        return fit

    with pytest.raises(RuntimeError, match="fold 0"):
        tune_parameter(studies, broken_factory, Grid("mu", [0.1]), plan)
