"""Readers and writers for the package's file formats.

Formats:
  - study data CSV: header ``study_id,y,x1..xp``, one row per observation
  - weekly mortality CSV: ``country,year,week,deaths,population`` with
    ``death_rate`` accepted in lieu of (or next to) population
  - hemisphere map: JSON object ``{country: "north"|"south"}``
  - model document: JSON with a ``format_version`` field
  - CV table CSV: ``parameter,value,fold,rmse``
  - result/summary CSVs for the experiment runners

All floats are written with ``repr`` so a re-run with the same seed
produces byte-identical artifacts.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .core import CoefficientMatrix, EnsembleWeights, Standardizer, Study
from .mortality import NORTH, SOUTH, CountrySeries, WeeklyRecord
from .oec import OecModel
from .stacking import MssModel, Variant

FORMAT_VERSION = 1

__all__ = [
    "FORMAT_VERSION",
    "read_studies_csv", "write_studies_csv",
    "read_weekly_csv", "write_weekly_csv",
    "read_hemisphere_map", "write_hemisphere_map", "load_corpus",
    "model_document", "model_from_document",
    "write_model_json", "read_model_json",
    "write_csv", "write_cv_table_csv",
]


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows) -> None:
    """Plain CSV writer with canonical float formatting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_cv_table_csv(path, records) -> None:
    write_csv(path, ["parameter", "value", "fold", "rmse"],
              [(r["parameter"], r["value"], r["fold"], r["rmse"])
               for r in records])


# ------------------------------------------------------------ study data


def write_studies_csv(path, studies) -> None:
    studies = list(studies)
    if not studies:
        raise ValueError("no studies to write")
    p = studies[0].p
    if any(s.p != p for s in studies):
        raise ValueError("studies disagree on the number of covariates")
    header = ["study_id", "y"] + [f"x{j + 1}" for j in range(p)]
    rows = []
    for s in studies:
        for i in range(s.n):
            rows.append([s.id, s.y[i]] + list(s.X_raw[i]))
    write_csv(path, header, rows)


def read_studies_csv(path):
    """Parse the interchange CSV back into studies, preserving the order
    of first appearance."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        p = len(header) - 2
        want = ["study_id", "y"] + [f"x{j + 1}" for j in range(p)]
        if header != want or p < 1:
            raise ValueError(
                f"{path}: expected header study_id,y,x1..xp, got "
                f"{','.join(header)}")
        groups: dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected "
                                 f"{len(header)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: non-numeric value") from None
            groups.setdefault(row[0], []).append(vals)
    if not groups:
        raise ValueError(f"{path}: no data rows")
    out = []
    for sid, rows in groups.items():
        arr = np.asarray(rows)
        out.append(Study(sid, arr[:, 0], arr[:, 1:]))
    return out


# -------------------------------------------------------- weekly mortality


def write_weekly_csv(path, corpus) -> None:
    rows = []
    for series in corpus:
        for r in series.records:
            rows.append([series.country, r.year, r.iso_week, r.deaths,
                         "" if r.population_annual is None
                         else _fmt(r.population_annual),
                         "" if r.death_rate_reported is None
                         else _fmt(r.death_rate_reported)])
    write_csv(path, ["country", "year", "week", "deaths", "population",
                     "death_rate"], rows)


def read_weekly_csv(path) -> dict:
    """Country -> list of records. Accepts ``population`` and/or
    ``death_rate`` columns; at least one must be present."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        needed = {"country", "year", "week", "deaths"}
        if not needed <= set(cols):
            raise ValueError(f"{path}: missing columns "
                             f"{sorted(needed - set(cols))}")
        if "population" not in cols and "death_rate" not in cols:
            raise ValueError(f"{path}: need a population or death_rate column")
        by_country: dict[str, list] = {}
        for lineno, row in enumerate(reader, start=2):
            def grab(col):
                v = (row.get(col) or "").strip()
                return float(v) if v else None
            try:
                rec = WeeklyRecord(
                    row["country"], int(row["year"]), int(row["week"]),
                    float(row["deaths"]),
                    population_annual=grab("population"),
                    death_rate_reported=grab("death_rate"))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            by_country.setdefault(rec.country, []).append(rec)
    if not by_country:
        raise ValueError(f"{path}: no data rows")
    return by_country


def write_hemisphere_map(path, mapping) -> None:
    with open(path, "w") as fh:
        json.dump(dict(mapping), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_hemisphere_map(path) -> dict:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a JSON object")
    out = {}
    for country, hemi in raw.items():
        h = str(hemi).strip().lower()
        if h not in (NORTH, SOUTH):
            raise ValueError(f"{path}: bad hemisphere {hemi!r} "
                             f"for {country!r}")
        out[str(country)] = h
    return out


def load_corpus(data_path, hemisphere_path) -> list:
    """Weekly CSV + hemisphere map -> CountrySeries list (file order)."""
    by_country = read_weekly_csv(data_path)
    hemis = read_hemisphere_map(hemisphere_path)
    missing = sorted(set(by_country) - set(hemis))
    if missing:
        raise ValueError(f"countries missing from hemisphere map: {missing}")
    return [CountrySeries(c, hemis[c], tuple(recs))
            for c, recs in by_country.items()]


# ----------------------------------------------------------- model files


def _variant_doc(variant: Variant) -> dict:
    return {"kind": variant.kind, "target_id": variant.target_id}


def _standardizer_doc(std: Standardizer) -> dict:
    return {"means": std.means.tolist(), "sds": std.sds.tolist()}


def model_document(model) -> dict:
    """Serializable description of a fitted model."""
    if isinstance(model, OecModel):
        trace = model.objective_trace.tolist()
        return {
            "format_version": FORMAT_VERSION,
            "kind": "oec",
            "variant": _variant_doc(model.variant),
            "member_ids": list(model.coefficients.ids),
            "coefficients": model.coefficients.values.tolist(),
            "weights": {"intercept": model.weights.intercept,
                        "values": model.weights.weights},
            "standardizer": _standardizer_doc(model.standardizer),
            "hyperparameters": {"lambdas": model.lambdas, "mu": model.mu,
                                "eta": model.eta},
            "tol": model.tol,
            "iterations": model.iterations,
            "converged": model.converged,
            "objective_trace": trace,
            "final_objective": trace[-1],
        }
    if isinstance(model, MssModel):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "mss",
            "variant": _variant_doc(model.variant),
            "member_ids": list(model.coefficients.ids),
            "coefficients": model.coefficients.values.tolist(),
            "weights": {"intercept": model.weights.intercept,
                        "values": model.weights.weights},
            "standardizer": _standardizer_doc(model.standardizer),
            "hyperparameters": {"lambdas": model.lambdas, "mu": model.mu},
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def linear_document(fit_name, beta, standardizer, lam,
                    target_id=None) -> dict:
    """Document for a single ridge fit (target-only or merged)."""
    return {
        "format_version": FORMAT_VERSION,
        "kind": "linear",
        "fit": fit_name,
        "target_id": target_id,
        "beta": np.asarray(beta).tolist(),
        "standardizer": _standardizer_doc(standardizer),
        "hyperparameters": {"lambda": float(lam)},
    }


def model_from_document(doc: dict):
    """Rebuild the fitted-model object (or (beta, standardizer) pair for
    linear documents) from its JSON form."""
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version "
                         f"{doc.get('format_version')!r}")
    kind = doc.get("kind")
    if kind not in ("linear", "mss", "oec"):
        raise ValueError(f"unknown model kind {kind!r}")
    std = Standardizer(means=np.asarray(doc["standardizer"]["means"]),
                       sds=np.asarray(doc["standardizer"]["sds"]))
    if kind == "linear":
        return np.asarray(doc["beta"]), std
    variant = Variant(doc["variant"]["kind"], doc["variant"]["target_id"])
    coef = CoefficientMatrix(ids=tuple(doc["member_ids"]),
                             values=np.asarray(doc["coefficients"]))
    weights = EnsembleWeights(intercept=doc["weights"]["intercept"],
                              weights=doc["weights"]["values"])
    hyper = doc["hyperparameters"]
    if kind == "mss":
        return MssModel(coefficients=coef, weights=weights, variant=variant,
                        standardizer=std, lambdas=dict(hyper["lambdas"]),
                        mu=float(hyper["mu"]))
    if kind == "oec":
        return OecModel(coefficients=coef, weights=weights, variant=variant,
                        standardizer=std, eta=float(hyper["eta"]),
                        mu=float(hyper["mu"]),
                        lambdas=dict(hyper["lambdas"]),
                        objective_trace=np.asarray(doc["objective_trace"]),
                        converged=bool(doc["converged"]),
                        tol=float(doc["tol"]))
    raise ValueError(f"unknown model kind {kind!r}")


def write_model_json(path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_model_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
