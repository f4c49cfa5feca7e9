"""Weekly mortality pipeline: population interpolation, annualized rate
construction, the seasonal/secular design, and leave-one-country-out
time-series evaluation.

Two week indexes are used. The ordering index counts true ISO weeks since
2000-W01 and drives windows, eligibility, and leakage checks. The basis
index is 52*(iso_year - 2000) + min(week, 52) - 1, so the period-52
seasonal columns stay phase-locked to the calendar across 53-week years
(week 53 shares the basis argument of week 52).
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from datetime import date

import numpy as np

from .core import Study, rmse
from .methods import (
    METHOD_NAMES,
    MSS_COUNTERPART,
    TuningPlan,
    fit_method,
    tune_hyperparameters,
)
from .tuning import TIME_SERIES

NORTH = "north"
SOUTH = "south"
MIN_AUX_WEEKS = 100
MIDYEAR_WEEK = 26

MORTALITY_METHODS = ("ssm", "mss-s", "mss-sn", "oec-s", "oec-sn")

_EPOCH = date.fromisocalendar(2000, 1, 1)


def iso_weeks_in_year(year: int) -> int:
    return date(year, 12, 28).isocalendar()[1]


def week_index_global(year: int, week: int) -> int:
    """True ISO weeks elapsed since 2000-W01."""
    return (date.fromisocalendar(year, week, 1) - _EPOCH).days // 7


def week_index_basis(year: int, week: int) -> int:
    """Calendar-locked index for the seasonal basis; week 53 maps to 52."""
    return 52 * (year - 2000) + min(week, 52) - 1


@dataclasses.dataclass
class WeeklyRecord:
    country: str
    year: int
    iso_week: int
    deaths: float
    population_annual: float | None = None
    death_rate_reported: float | None = None

    def __post_init__(self):
        self.year = int(self.year)
        self.iso_week = int(self.iso_week)
        self.deaths = float(self.deaths)
        if not 1 <= self.iso_week <= iso_weeks_in_year(self.year):
            raise ValueError(
                f"invalid ISO week {self.iso_week} for year {self.year}")
        if self.deaths < 0:
            raise ValueError("deaths must be non-negative")
        if self.population_annual is None and self.death_rate_reported is None:
            raise ValueError(
                "record needs population_annual or death_rate_reported")
        if self.population_annual is not None:
            self.population_annual = float(self.population_annual)
            if self.population_annual <= 0:
                raise ValueError("population_annual must be positive")
        if self.death_rate_reported is not None:
            self.death_rate_reported = float(self.death_rate_reported)
            if self.death_rate_reported <= 0:
                raise ValueError("death_rate_reported must be positive")


@dataclasses.dataclass
class CountrySeries:
    country: str
    hemisphere: str
    records: tuple

    def __post_init__(self):
        hem = str(self.hemisphere).strip().lower()
        if hem not in (NORTH, SOUTH):
            raise ValueError(f"hemisphere must be north or south, got "
                             f"{self.hemisphere!r}")
        self.hemisphere = hem
        recs = sorted(self.records,
                      key=lambda r: week_index_global(r.year, r.iso_week))
        seen = set()
        for r in recs:
            key = (r.year, r.iso_week)
            if key in seen:
                raise ValueError(f"duplicate week {key} in {self.country!r}")
            seen.add(key)
        self.records = tuple(recs)

    def t_global(self) -> np.ndarray:
        return np.array([week_index_global(r.year, r.iso_week)
                         for r in self.records], dtype=int)

    def t_basis(self) -> np.ndarray:
        return np.array([week_index_basis(r.year, r.iso_week)
                         for r in self.records], dtype=float)

    def truncate_before(self, t_limit: int) -> "CountrySeries":
        """Keep records with ordering index strictly below ``t_limit``."""
        kept = tuple(r for r in self.records
                     if week_index_global(r.year, r.iso_week) < t_limit)
        return CountrySeries(self.country, self.hemisphere, kept)


@dataclasses.dataclass(frozen=True)
class LocoTask:
    target_country: str
    test_year: int
    auxiliaries: tuple

    @property
    def train_year(self) -> int:
        return self.test_year - 1

    @property
    def test_start(self) -> int:
        return week_index_global(self.test_year, 1)

    @property
    def test_end(self) -> int:
        return week_index_global(self.test_year + 1, 1)


def annual_midyear_populations(series: CountrySeries) -> dict:
    """Year -> mid-year population, direct where reported, otherwise the
    median of weekly deaths/rate implied values."""
    direct = {}
    implied = {}
    for r in series.records:
        if r.population_annual is not None:
            direct.setdefault(r.year, []).append(r.population_annual)
        elif r.death_rate_reported is not None and r.deaths > 0:
            implied.setdefault(r.year, []).append(
                r.deaths / r.death_rate_reported)
    out = {}
    for year, vals in implied.items():
        out[year] = float(np.median(vals))
    for year, vals in direct.items():
        out[year] = float(np.median(vals))
    return out


def interpolate_population(series: CountrySeries) -> np.ndarray:
    """Weekly population estimates: OLS of annual mid-year population
    against the basis index of each year's week 26, evaluated per record."""
    annual = annual_midyear_populations(series)
    if len(annual) < 2:
        raise ValueError(
            f"need at least 2 annual population values for "
            f"{series.country!r}, got {len(annual)}")
    years = sorted(annual)
    t_mid = np.array([week_index_basis(y, MIDYEAR_WEEK) for y in years],
                     dtype=float)
    pops = np.array([annual[y] for y in years])
    design = np.column_stack([np.ones_like(t_mid), t_mid])
    coef, *_ = np.linalg.lstsq(design, pops, rcond=None)
    return coef[0] + coef[1] * series.t_basis()


def compute_rates(series: CountrySeries) -> np.ndarray:
    """Annualized weekly death rates per 1000: 1000 * 52 * deaths / pop."""
    pop = interpolate_population(series)
    if np.any(pop <= 0):
        raise ValueError(
            f"nonpositive interpolated population in {series.country!r}")
    deaths = np.array([r.deaths for r in series.records])
    return (1000.0 * 52.0 * deaths) / pop


def fourier_design(t_values, include_linear: bool = True) -> np.ndarray:
    """Raw covariates [t?, sin(2*pi*j*t/52), cos(...) for j in {1,2}];
    the intercept column is added downstream."""
    t = np.asarray(t_values, dtype=float).ravel()
    if t.size == 0:
        raise ValueError("t_values must be nonempty")
    cols = [t] if include_linear else []
    for j in (1, 2):
        arg = 2.0 * np.pi * j * t / 52.0
        cols.append(np.sin(arg))
        cols.append(np.cos(arg))
    return np.column_stack(cols)


def _full_training_year(series: CountrySeries, year: int) -> bool:
    weeks = {r.iso_week for r in series.records if r.year == year}
    return weeks == set(range(1, iso_weeks_in_year(year) + 1))


def _interpolable(series: CountrySeries) -> bool:
    return len(annual_midyear_populations(series)) >= 2


def build_loco_tasks(corpus, years) -> list:
    """One task per (Northern target, test year) with a complete preceding
    training year; auxiliaries need >= 100 weeks strictly before the test
    start. Infeasible pairs are omitted."""
    corpus = list(corpus)
    tasks = []
    for target in corpus:
        if target.hemisphere != NORTH:
            continue
        for year in years:
            test_start = week_index_global(year, 1)
            if not _full_training_year(target, year - 1):
                continue
            if not any(test_start <= week_index_global(r.year, r.iso_week)
                       < week_index_global(year + 1, 1)
                       for r in target.records):
                continue
            if not _interpolable(target.truncate_before(test_start)):
                continue
            aux = []
            for c in corpus:
                if c.country == target.country:
                    continue
                trunc = c.truncate_before(test_start)
                if len(trunc.records) >= MIN_AUX_WEEKS and _interpolable(trunc):
                    aux.append(c.country)
            if aux:
                tasks.append(LocoTask(target.country, year,
                                      tuple(sorted(aux))))
    return tasks


def materialize_task(corpus, task: LocoTask, include_linear: bool = True,
                     target_train_weeks: int | None = None):
    """Build the training studies and test set for one task.

    Training rates are computed from data strictly before the test start
    only; test-truth rates may use the test year itself (data after the
    test year is discarded). Returns (aux_studies, target_study,
    (X_test, y_test), meta) where meta carries the ordering indexes of
    every training row for leakage auditing.
    """
    by_country = {c.country: c for c in corpus}
    target_series = by_country[task.target_country]
    test_start, test_end = task.test_start, task.test_end

    train_t = {}
    aux_studies = []
    for cid in task.auxiliaries:
        trunc = by_country[cid].truncate_before(test_start)
        rates = compute_rates(trunc)
        x_raw = fourier_design(trunc.t_basis(), include_linear)
        aux_studies.append(Study(cid, rates, x_raw))
        train_t[cid] = trunc.t_global()

    trunc = target_series.truncate_before(test_start)
    rates = compute_rates(trunc)
    tg = trunc.t_global()
    mask = np.array([r.year == task.train_year for r in trunc.records])
    idx = np.nonzero(mask)[0]
    if target_train_weeks is not None:
        if target_train_weeks < 1:
            raise ValueError("target_train_weeks must be >= 1")
        idx = idx[-target_train_weeks:]
    x_raw = fourier_design(trunc.t_basis()[idx], include_linear)
    target_study = Study(task.target_country, rates[idx], x_raw)
    train_t[task.target_country] = tg[idx]

    scoped = target_series.truncate_before(test_end)
    test_rates = compute_rates(scoped)
    t_all = scoped.t_global()
    test_mask = t_all >= test_start
    x_test = fourier_design(scoped.t_basis()[test_mask], include_linear)
    y_test = test_rates[test_mask]

    meta = {"test_start": test_start, "train_t": train_t,
            "test_t": t_all[test_mask]}
    return aux_studies, target_study, (x_test, y_test), meta


def leakage_violations(meta) -> int:
    """Count training rows at or after the test start (expected 0)."""
    start = meta["test_start"]
    return int(sum(int(np.sum(np.asarray(t) >= start))
                   for t in meta["train_t"].values()))


@dataclasses.dataclass
class LocoResult:
    methods: tuple
    rows: list
    failures: dict
    summary: list

    @property
    def n_failures(self) -> int:
        return len(self.failures)


def default_mortality_plan(**kw) -> TuningPlan:
    """Mixing-weight-only tuning with time-ordered target folds."""
    kw.setdefault("specialist_fold_scheme", TIME_SERIES)
    return TuningPlan.none(**kw)


def _loco_worker(corpus, task, methods, plan, include_linear,
                 target_train_weeks):
    aux, target, (x_test, y_test), meta = materialize_task(
        corpus, task, include_linear, target_train_weeks)
    if leakage_violations(meta):
        raise RuntimeError(f"temporal leakage in task {task}")
    hp = tune_hyperparameters(aux, target, plan, methods)
    out = {}
    for name in methods:
        predictor = fit_method(name, aux, target, hp)
        out[name] = rmse(predictor(x_test), y_test)
    return out


def evaluate_loco(corpus, tasks, methods=MORTALITY_METHODS,
                  tuning: TuningPlan | None = None,
                  include_linear: bool = True,
                  target_train_weeks: int | None = None,
                  jobs: int = 1) -> LocoResult:
    """Fit and score every method on every task; failures are recorded
    and excluded. Summary rows are per-year mean ratios to the
    target-only fit and to each joint method's stacking counterpart."""
    corpus = list(corpus)
    methods = tuple(dict.fromkeys(methods))
    for m in methods:
        if m not in METHOD_NAMES:
            raise ValueError(f"unknown method {m!r}")
    plan = tuning if tuning is not None else default_mortality_plan()

    per_task = {}
    failures = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = {(t.target_country, t.test_year):
                    pool.submit(_loco_worker, corpus, t, methods, plan,
                                include_linear, target_train_weeks)
                    for t in tasks}
            for key, fut in futs.items():
                try:
                    per_task[key] = fut.result()
                except Exception as exc:
                    failures[key] = f"{type(exc).__name__}: {exc}"
    else:
        for t in tasks:
            key = (t.target_country, t.test_year)
            try:
                per_task[key] = _loco_worker(corpus, t, methods, plan,
                                             include_linear,
                                             target_train_weeks)
            except Exception as exc:
                failures[key] = f"{type(exc).__name__}: {exc}"

    rows = []
    for (country, year) in sorted(per_task):
        for m in methods:
            rows.append({"country": country, "test_year": year,
                         "method": m, "rmse": per_task[(country, year)][m]})

    summary = []
    years = sorted({y for (_, y) in per_task})
    for year in years:
        scores = [v for (c, y), v in per_task.items() if y == year]
        for m in methods:
            baselines = ["ssm"] if "ssm" in methods else []
            cp = MSS_COUNTERPART.get(m)
            if cp in methods:
                baselines.append(cp)
            for b in dict.fromkeys(baselines):
                vals = [s[m] / s[b] for s in scores]
                summary.append({"test_year": year, "ratio": f"{m}/{b}",
                                "value": float(np.mean(vals))})
    return LocoResult(methods=methods, rows=rows, failures=failures,
                      summary=summary)


def make_synthetic_corpus(n_countries: int = 5, start_year: int = 2001,
                          n_years: int = 6, seed: int = 0,
                          noise_sd: float = 0.8,
                          country_spread: float = 1.0) -> list:
    """Deterministic fixture corpus: a shared seasonal rate model with
    country-level coefficient noise, realistic populations, and rounded
    death counts. Includes 53-week ISO years when the range covers one.
    All countries are Northern except the last (an auxiliary-only
    Southern series when n_countries >= 5)."""
    rng = np.random.default_rng(seed)
    base = np.array([10.0, 0.0015, 1.3, 0.9, 0.35, 0.2])
    sd_vec = country_spread * np.array([0.3, 0.0005, 0.12, 0.12, 0.06, 0.06])
    corpus = []
    for i in range(n_countries):
        theta = base + sd_vec * rng.standard_normal(6)
        pop0 = float(rng.uniform(2e6, 2e7))
        growth = float(rng.uniform(-0.002, 0.004)) * pop0
        records = []
        for year in range(start_year, start_year + n_years):
            pop = pop0 + growth * (year - start_year)
            for week in range(1, iso_weeks_in_year(year) + 1):
                t = week_index_basis(year, week)
                x = np.concatenate(([1.0, float(t)],
                                    fourier_design([t], False)[0]))
                rate = float(x @ theta + noise_sd * rng.standard_normal())
                deaths = max(0.0, np.rint(rate * pop / (1000.0 * 52.0)))
                records.append(WeeklyRecord(f"c{i + 1}", year, week, deaths,
                                            population_annual=pop))
        hemisphere = SOUTH if (n_countries >= 5 and i == n_countries - 1) \
            else NORTH
        corpus.append(CountrySeries(f"c{i + 1}", hemisphere, tuple(records)))
    return corpus
