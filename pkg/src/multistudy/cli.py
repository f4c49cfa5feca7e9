"""Batch entry points: one binary, one subcommand per experiment family.

Every option can come from a JSON config document (``--config``); explicit
flags override document values, and unknown document keys are rejected.
A run writes its artifacts plus a manifest (config echo, library versions,
seed, no timestamps) into ``--output-dir``; re-running a command with the
manifest as the config document reproduces the run byte for byte.

Set ``OEC_LOG=info`` (or ``debug``) for progress logging.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np
import scipy

from . import __version__
from ._kernels import backend_name
from .core import fit_standardizer
from .methods import (
    METHOD_NAMES,
    TuningPlan,
    default_experiment_plan,
    tune_hyperparameters,
    variant_for,
)
from .mortality import (
    MORTALITY_METHODS,
    build_loco_tasks,
    default_mortality_plan,
    evaluate_loco,
)
from .oec import OecConfig, oec_fit
from .serialize import (
    linear_document,
    load_corpus,
    model_document,
    read_studies_csv,
    write_csv,
    write_cv_table_csv,
    write_model_json,
)
from .simulation import (
    GeneralSimConfig,
    default_data_driven_config,
    run_experiment,
)
from .stacking import mss_fit, ssm_fit, tom_fit

log = logging.getLogger("multistudy.cli")

VARIANT_CHOICES = ("mss-g", "mss-s", "mss-sn", "oec-g", "oec-s", "oec-sn",
                   "tom", "ssm")


# --------------------------------------------------------- option registry


@dataclasses.dataclass(frozen=True)
class Opt:
    """One named option: document key, parser, validator, CLI exposure."""

    name: str
    kind: str  # int | float | str | flag | floatlist | intlist | strlist | map
    default: object = None
    required: bool = False
    check: object = None  # value -> error message or None
    flag: str | None = None  # CLI flag; None means document/positional only
    help: str = ""


def _positive_int(what):
    return lambda v: None if v >= 1 else f"{what} must be >= 1"


def _nonneg(what):
    return lambda v: None if v >= 0 else f"{what} must be >= 0"


def _open_unit(v):
    if 0.0 < v < 1.0:
        return None
    return "must lie in the open interval (0, 1)"


def _eta_grid_ok(vals):
    bad = [v for v in vals if not 0.0 < v < 1.0]
    if bad:
        return f"grid values must lie in the open interval (0, 1), got {bad}"
    return None


def _penalty_grid_ok(vals):
    bad = [v for v in vals if v < 0.0]
    if bad:
        return f"grid values must be >= 0, got {bad}"
    return None


def _methods_ok(vals):
    bad = [m for m in vals if m not in METHOD_NAMES]
    if bad:
        return f"unknown methods {bad}; known: {', '.join(METHOD_NAMES)}"
    return None


def _variant_ok(v):
    if v in VARIANT_CHOICES:
        return None
    return f"unknown variant {v!r}; choose from {', '.join(VARIANT_CHOICES)}"


def _existing_path(v):
    return None if os.path.exists(v) else f"path {v!r} does not exist"


_COMMON = [
    Opt("seed", "int", default=0, flag="--seed",
        help="random seed (mandatory for the simulate commands)"),
    Opt("jobs", "int", default=1, check=_positive_int("jobs"), flag="--jobs",
        help="worker processes for replicates/tasks"),
    Opt("output_dir", "str", default=".", flag="--output-dir",
        help="directory for artifacts (created if missing)"),
]

_TUNING = [
    Opt("lambda_grid", "floatlist", check=_penalty_grid_ok,
        flag="--lambda-grid",
        help="comma-separated ridge penalty grid (per-study and merged)"),
    Opt("eta_grid", "floatlist", check=_eta_grid_ok, flag="--eta-grid",
        help="comma-separated mixing-weight grid, values in (0, 1)"),
    Opt("mu", "float", check=_nonneg("mu"), flag="--mu",
        help="pin the stacking/joint weight penalty to one value"),
]

OPTIONS = {
    "simulate-datadriven": _COMMON + _TUNING + [
        Opt("seed", "int", required=True, flag="--seed",
            help="random seed (required)"),
        Opt("K", "int", default=5, check=lambda v: None if v >= 2
            else "K must be >= 2", flag="--K",
            help="number of training studies"),
        Opt("sigma2_theta", "float", default=0.25,
            check=_nonneg("sigma2-theta"), flag="--sigma2-theta",
            help="between-study coefficient variance scale"),
        Opt("replicates", "int", default=30,
            check=_positive_int("replicates"), flag="--replicates"),
        Opt("methods", "strlist", default=["ssm", "mss-s", "oec-s"],
            check=_methods_ok),
    ],
    "simulate-general": _COMMON + _TUNING + [
        Opt("seed", "int", required=True, flag="--seed",
            help="random seed (required)"),
        Opt("C", "int", default=3, check=lambda v: None if v in (3, 6)
            else "C must be 3 or 6", flag="--C",
            help="number of clusters (3 or 6)"),
        Opt("sigma2_delta", "float", default=1.0,
            check=_nonneg("sigma2-delta"), flag="--sigma2-delta",
            help="cluster effect variance"),
        Opt("sigma2_x", "float", default=1.0, check=_nonneg("sigma2-x"),
            flag="--sigma2-x", help="covariate shift variance"),
        Opt("replicates", "int", default=30,
            check=_positive_int("replicates"), flag="--replicates"),
        Opt("methods", "strlist", check=_methods_ok),
    ],
    "evaluate-mortality": _COMMON + _TUNING + [
        Opt("data", "str", required=True, check=_existing_path,
            help="weekly mortality CSV"),
        Opt("hemispheres", "str", required=True, check=_existing_path,
            help="JSON hemisphere map"),
        Opt("years", "intlist", help="test years (default: all feasible)"),
        Opt("methods", "strlist", default=list(MORTALITY_METHODS),
            check=_methods_ok),
        Opt("no_linear_term", "flag", default=False, flag="--no-linear-term",
            help="drop the secular trend column from the design"),
        Opt("target_train_weeks", "int",
            check=_positive_int("target-train-weeks"),
            flag="--target-train-weeks",
            help="keep only the last W weeks of the target training year"),
    ],
    "fit": _COMMON + [
        Opt("data", "str", required=True, check=_existing_path,
            help="study data CSV (study_id,y,x1..xp)"),
        Opt("variant", "str", required=True, check=_variant_ok,
            flag="--variant", help="method to fit"),
        Opt("eta", "float", check=_open_unit, flag="--eta",
            help="mixing weight for oec variants, in (0, 1)"),
        Opt("mu", "float", default=0.0, check=_nonneg("mu"), flag="--mu",
            help="ensemble weight penalty"),
        Opt("target", "str", help="target study id "
            "(default: last study in the file)"),
        Opt("lambdas", "map", help="per-study ridge penalties"),
        Opt("lambda", "float", default=0.0, check=_nonneg("lambda"),
            help="single ridge penalty for the ssm/tom fits"),
    ],
    "tune": _COMMON + _TUNING + [
        Opt("data", "str", required=True, check=_existing_path,
            help="study data CSV (study_id,y,x1..xp)"),
        Opt("variant", "str", required=True, check=_variant_ok,
            flag="--variant", help="method whose hyperparameters to tune"),
        Opt("target", "str", help="target study id "
            "(default: last study in the file)"),
        Opt("folds", "int", check=_positive_int("folds"),
            help="fold count override"),
    ],
}


def _dedupe(opts):
    # later entries override earlier ones (used to make seed required on
    # the stochastic commands)
    out = {}
    for o in opts:
        out[o.name] = o
    return list(out.values())


OPTIONS = {cmd: _dedupe(opts) for cmd, opts in OPTIONS.items()}

_POSITIONAL = {
    "evaluate-mortality": ["data", "hemispheres"],
    "fit": ["data"],
    "tune": ["data"],
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="oec",
        description="Multi-study ensemble experiments: simulation, "
                    "mortality evaluation, single fits, and tuning.")
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd, opts in OPTIONS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--config", default=None,
                       help="JSON config document (flags override it)")
        for name in _POSITIONAL.get(cmd, []):
            opt = next(o for o in opts if o.name == name)
            p.add_argument(name, nargs="?", default=None, help=opt.help)
        for o in opts:
            if o.flag is None or o.name in _POSITIONAL.get(cmd, []):
                continue
            if o.kind == "flag":
                p.add_argument(o.flag, dest=o.name, action="store_const",
                               const=True, default=None, help=o.help)
            else:
                # all values parse as strings here; typed parsing happens
                # in resolve_config so every bad field is reported at once
                p.add_argument(o.flag, dest=o.name, default=None,
                               help=o.help)
    return ap


# ----------------------------------------------------------- config layer


def _parse_value(opt: Opt, raw, issues):
    """Coerce one raw (string or document) value to its option type."""
    def fail(msg):
        issues.append({"field": opt.name, "message": msg})

    try:
        if opt.kind == "int":
            if isinstance(raw, bool):
                raise ValueError
            return int(raw)
        if opt.kind == "float":
            if isinstance(raw, bool):
                raise ValueError
            return float(raw)
        if opt.kind == "str":
            return str(raw)
        if opt.kind == "flag":
            if isinstance(raw, bool):
                return raw
            raise ValueError
        if opt.kind in ("floatlist", "intlist", "strlist"):
            if isinstance(raw, str):
                parts = [p.strip() for p in raw.split(",") if p.strip()]
            elif isinstance(raw, (list, tuple)):
                parts = list(raw)
            else:
                raise ValueError
            if not parts:
                raise ValueError
            cast = {"floatlist": float, "intlist": int,
                    "strlist": str}[opt.kind]
            return [cast(p) for p in parts]
        if opt.kind == "map":
            if isinstance(raw, dict):
                return {str(k): float(v) for k, v in raw.items()}
            raise ValueError
    except (TypeError, ValueError):
        fail(f"cannot parse {raw!r} as {opt.kind}")
        return None
    raise AssertionError(f"unhandled option kind {opt.kind}")


def load_document(path, command, issues):
    """Read a config document; a manifest is accepted and unwrapped."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        issues.append({"field": "config", "message": str(exc)})
        return {}
    except json.JSONDecodeError as exc:
        issues.append({"field": "config", "message": f"invalid JSON: {exc}"})
        return {}
    if not isinstance(doc, dict):
        issues.append({"field": "config",
                       "message": "document must be a JSON object"})
        return {}
    if {"command", "config", "versions"} <= set(doc):
        if doc["command"] != command:
            issues.append({"field": "config", "message":
                           f"manifest is for {doc['command']!r}, "
                           f"not {command!r}"})
            return {}
        doc = doc["config"]
    return doc


def resolve_config(command, args):
    """Merge defaults, document, and flags; validate everything at once.

    Returns (resolved dict, issues list); issues nonempty means the run
    must not start.
    """
    opts = {o.name: o for o in OPTIONS[command]}
    issues = []
    resolved = {name: o.default for name, o in opts.items()}

    if getattr(args, "config", None):
        doc = load_document(args.config, command, issues)
        for key in sorted(set(doc) - set(opts)):
            issues.append({"field": key, "message": "unknown key"})
        for key, raw in doc.items():
            if key in opts and raw is not None:
                val = _parse_value(opts[key], raw, issues)
                if val is not None:
                    resolved[key] = val

    for name, o in opts.items():
        raw = getattr(args, name, None)
        if raw is not None:
            val = _parse_value(o, raw, issues) if o.kind != "flag" else raw
            if val is not None:
                resolved[name] = val

    for name, o in opts.items():
        v = resolved[name]
        if v is None:
            if o.required:
                issues.append({"field": name, "message": "required"})
            continue
        if o.check:
            msg = o.check(v)
            if msg:
                issues.append({"field": name, "message": msg})
    return resolved, issues


def _json_safe(value):
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_manifest(out_dir, command, resolved) -> None:
    manifest = {
        "command": command,
        "config": _json_safe(resolved),
        "seed": resolved.get("seed"),
        "versions": {
            "multistudy": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
            "kernel_backend": backend_name(),
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_summary_txt(out_dir, lines) -> None:
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _tuning_plan(resolved, base_plan) -> TuningPlan:
    kw = {}
    if resolved.get("lambda_grid") is not None:
        grid = tuple(sorted(set(resolved["lambda_grid"])))
        kw["lambda_grid"] = grid
        kw["tom_lambda_grid"] = grid
    if resolved.get("eta_grid") is not None:
        kw["eta_grid"] = tuple(sorted(set(resolved["eta_grid"])))
    if resolved.get("mu") is not None:
        kw["stack_mu_grid"] = (float(resolved["mu"]),)
        kw["oec_mu_grid"] = (float(resolved["mu"]),)
    if resolved.get("folds") is not None:
        kw["n_folds"] = resolved["folds"]
    kw["seed"] = resolved.get("seed") or 0
    return dataclasses.replace(base_plan, **kw)


# ------------------------------------------------------------- commands


def _experiment_artifacts(out_dir, result, summary_header, summary_row):
    write_csv(os.path.join(out_dir, "results.csv"),
              ["replicate", "method", "rmse"], result.rows())
    ratios = sorted(result.summary)
    write_csv(os.path.join(out_dir, "summary.csv"),
              summary_header + ratios,
              [summary_row + [result.summary[r] for r in ratios]])
    lines = [f"{r}: {result.summary[r]:.4f}" for r in ratios]
    lines.append(f"failures: {result.n_failures}")
    for rep, msg in sorted(result.failures.items()):
        lines.append(f"  replicate {rep}: {msg}")
    return lines


def cmd_simulate_datadriven(resolved) -> list:
    cfg = default_data_driven_config(K=resolved["K"],
                                     sigma2_theta=resolved["sigma2_theta"])
    plan = _tuning_plan(resolved, default_experiment_plan())
    log.info("simulate-datadriven: K=%d sigma2_theta=%g replicates=%d",
             resolved["K"], resolved["sigma2_theta"], resolved["replicates"])
    result = run_experiment(cfg, resolved["methods"], resolved["replicates"],
                            seed=resolved["seed"], tuning=plan,
                            jobs=resolved["jobs"])
    return _experiment_artifacts(
        resolved["output_dir"], result, ["K", "sigma2_theta"],
        [resolved["K"], resolved["sigma2_theta"]])


def cmd_simulate_general(resolved) -> list:
    methods = resolved["methods"]
    if methods is None:
        methods = (["tom", "mss-g", "oec-g"] if resolved["C"] == 3
                   else ["ssm", "mss-sn", "oec-sn"])
    cfg = GeneralSimConfig(C=resolved["C"],
                           sigma2_delta=resolved["sigma2_delta"],
                           sigma2_X=resolved["sigma2_x"])
    plan = _tuning_plan(resolved, default_experiment_plan())
    log.info("simulate-general: C=%d sigma2_X=%g sigma2_delta=%g "
             "replicates=%d", resolved["C"], resolved["sigma2_x"],
             resolved["sigma2_delta"], resolved["replicates"])
    result = run_experiment(cfg, methods, resolved["replicates"],
                            seed=resolved["seed"], tuning=plan,
                            jobs=resolved["jobs"])
    return _experiment_artifacts(
        resolved["output_dir"], result,
        ["C", "sigma2_X", "sigma2_delta"],
        [resolved["C"], resolved["sigma2_x"], resolved["sigma2_delta"]])


def cmd_evaluate_mortality(resolved) -> list:
    corpus = load_corpus(resolved["data"], resolved["hemispheres"])
    years = resolved["years"]
    if years is None:
        years = sorted({r.year for c in corpus for r in c.records})
    tasks = build_loco_tasks(corpus, years)
    if not tasks:
        raise ValueError("no feasible (country, year) evaluation tasks")
    plan = _tuning_plan(resolved, default_mortality_plan())
    log.info("evaluate-mortality: %d tasks, methods=%s", len(tasks),
             ",".join(resolved["methods"]))
    result = evaluate_loco(
        corpus, tasks, methods=resolved["methods"], tuning=plan,
        include_linear=not resolved["no_linear_term"],
        target_train_weeks=resolved["target_train_weeks"],
        jobs=resolved["jobs"])
    out_dir = resolved["output_dir"]
    write_csv(os.path.join(out_dir, "results.csv"),
              ["country", "test_year", "method", "rmse"],
              [(r["country"], r["test_year"], r["method"], r["rmse"])
               for r in result.rows])
    ratios = sorted({r["ratio"] for r in result.summary})
    years_seen = sorted({r["test_year"] for r in result.summary})
    cell = {(r["test_year"], r["ratio"]): r["value"] for r in result.summary}
    write_csv(os.path.join(out_dir, "summary.csv"),
              ["test_year"] + ratios,
              [[y] + [cell[(y, r)] for r in ratios] for y in years_seen])
    lines = [f"{len(tasks)} tasks over years "
             f"{years_seen[0] if years_seen else '-'}"
             f"..{years_seen[-1] if years_seen else '-'}"]
    means = {r: float(np.mean([cell[(y, r)] for y in years_seen]))
             for r in ratios}
    lines += [f"{r}: {means[r]:.4f} (mean over years)" for r in ratios]
    lines.append(f"failures: {result.n_failures}")
    for key, msg in sorted(result.failures.items()):
        lines.append(f"  task {key}: {msg}")
    return lines


def _load_fit_inputs(resolved):
    studies = read_studies_csv(resolved["data"])
    target_id = resolved.get("target") or studies[-1].id
    if all(s.id != target_id for s in studies):
        raise ValueError(f"target study {target_id!r} not in the data")
    lambdas = {s.id: 0.0 for s in studies}
    lambdas.update(resolved.get("lambdas") or {})
    unknown = sorted(set(resolved.get("lambdas") or {}) - {s.id
                                                           for s in studies})
    if unknown:
        raise ValueError(f"lambdas given for unknown studies: {unknown}")
    return studies, target_id, lambdas


def cmd_fit(resolved) -> list:
    name = resolved["variant"]
    if name.startswith("oec-") and resolved["eta"] is None:
        raise ValueError("oec variants need --eta in (0, 1)")
    studies, target_id, lambdas = _load_fit_inputs(resolved)
    log.info("fit: variant=%s on %d studies", name, len(studies))

    if name == "ssm":
        target = next(s for s in studies if s.id == target_id)
        std = fit_standardizer([target])
        lam = (resolved.get("lambdas") or {}).get(target_id,
                                                  resolved["lambda"])
        beta = ssm_fit(target, lam, std)
        doc = linear_document("ssm", beta, std, lam, target_id=target_id)
        lines = [f"ssm fit on study {target_id!r}"]
    elif name == "tom":
        std = fit_standardizer(studies)
        lam = resolved["lambda"]
        beta = tom_fit(studies, lam, std)
        doc = linear_document("tom", beta, std, lam)
        lines = [f"tom fit on {len(studies)} studies"]
    elif name.startswith("mss-"):
        variant = variant_for(name, target_id)
        model = mss_fit(studies, variant, lambdas, resolved["mu"])
        doc = model_document(model)
        lines = [f"{name} fit: weights on "
                 f"{len(model.weights.weights)} members"]
    else:
        variant = variant_for(name, target_id)
        config = OecConfig(variant, eta=resolved["eta"], mu=resolved["mu"],
                           lambdas=lambdas)
        model = oec_fit(config, studies)
        doc = model_document(model)
        lines = [f"{name} fit: eta={model.eta} iterations="
                 f"{model.iterations} converged={model.converged}",
                 f"final objective {float(model.objective_trace[-1])!r}"]

    write_model_json(os.path.join(resolved["output_dir"], "model.json"), doc)
    return lines


def cmd_tune(resolved) -> list:
    name = resolved["variant"]
    studies, target_id, _ = _load_fit_inputs(dict(resolved, lambdas=None))
    plan = _tuning_plan(resolved, TuningPlan())
    if name.endswith("-g") or name == "tom":
        train, target = studies, None
    else:
        target = next(s for s in studies if s.id == target_id)
        train = [s for s in studies if s.id != target_id]
    log.info("tune: variant=%s, %d training studies", name, len(train))
    hp = tune_hyperparameters(train, target, plan, [name])
    out_dir = resolved["output_dir"]
    write_cv_table_csv(os.path.join(out_dir, "cv.csv"), hp.cv_records)
    selected = {"lambdas": hp.lambdas, "stack_mu": hp.stack_mu,
                "oec_mu": hp.oec_mu, "etas": hp.etas,
                "tom_lambda": hp.tom_lambda}
    with open(os.path.join(out_dir, "selected.json"), "w") as fh:
        json.dump(_json_safe(selected), fh, indent=2, sort_keys=True)
        fh.write("\n")
    lines = [f"tuned {name}: " + ", ".join(
        f"{k}={v}" for k, v in selected.items() if v)]
    lines.append(f"{len(hp.cv_records)} CV evaluations")
    return lines


COMMANDS = {
    "simulate-datadriven": cmd_simulate_datadriven,
    "simulate-general": cmd_simulate_general,
    "evaluate-mortality": cmd_evaluate_mortality,
    "fit": cmd_fit,
    "tune": cmd_tune,
}


def main(argv=None) -> int:
    level = os.environ.get("OEC_LOG")
    if level:
        logging.basicConfig(
            level=getattr(logging, level.upper(), logging.WARNING),
            format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    resolved, issues = resolve_config(args.command, args)
    if issues:
        record = {"error": "config", "command": args.command,
                  "issues": sorted(issues, key=lambda i: i["field"])}
        print(json.dumps(record), file=sys.stderr)
        return 2
    try:
        os.makedirs(resolved["output_dir"], exist_ok=True)
        lines = COMMANDS[args.command](resolved)
        write_manifest(resolved["output_dir"], args.command, resolved)
        _write_summary_txt(resolved["output_dir"], lines)
        for line in lines:
            print(line)
        return 0
    except Exception as exc:
        record = {"error": "runtime", "command": args.command,
                  "message": f"{type(exc).__name__}: {exc}"}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
