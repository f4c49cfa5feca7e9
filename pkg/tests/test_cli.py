"""End-to-end checks of the command line interface.

The expensive subcommands run once into session-scoped directories and
several tests inspect the same artifacts.
"""

import hashlib
import json

import numpy as np
import pytest

from multistudy import cli
from multistudy.core import Study
from multistudy.mortality import make_synthetic_corpus
from multistudy.serialize import (
    read_model_json,
    write_hemisphere_map,
    write_studies_csv,
    write_weekly_csv,
)


@pytest.fixture(scope="module")
def studies_csv(tmp_path_factory):
    rng = np.random.default_rng(42)
    studies = []
    for sid in ["alpha", "beta", "gamma"]:
        X = rng.normal(size=(40, 2))
        y = 1.0 + X @ np.array([0.5, -0.25]) + rng.normal(scale=0.1, size=40)
        studies.append(Study(sid, y, X))
    path = tmp_path_factory.mktemp("data") / "studies.csv"
    write_studies_csv(path, studies)
    return path


@pytest.fixture(scope="module")
def mortality_files(tmp_path_factory):
    corpus = make_synthetic_corpus(n_countries=3, start_year=2001,
                                   n_years=3, seed=5)
    d = tmp_path_factory.mktemp("mort")
    data, hemi = d / "weekly.csv", d / "hemi.json"
    write_weekly_csv(data, corpus)
    write_hemisphere_map(hemi, {c.country: c.hemisphere for c in corpus})
    return data, hemi


def run(argv):
    return cli.main([str(a) for a in argv])


def stderr_record(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


# ------------------------------------------------------------- validation


def test_empty_invocation_shows_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        run([])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_eta_out_of_range_names_open_interval(studies_csv, capsys):
    rc = run(["fit", "--variant", "oec-s", "--eta", "1.5", studies_csv])
    assert rc == 2
    record = stderr_record(capsys)
    assert record["error"] == "config"
    (issue,) = [i for i in record["issues"] if i["field"] == "eta"]
    assert "(0, 1)" in issue["message"]


def test_all_issues_reported_at_once(capsys):
    rc = run(["fit", "--variant", "bogus", "--eta", "2", "--mu", "-1",
              "missing.csv"])
    assert rc == 2
    record = stderr_record(capsys)
    fields = {i["field"] for i in record["issues"]}
    assert {"variant", "eta", "mu", "data"} <= fields


def test_unknown_document_keys_rejected(studies_csv, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"variant": "ssm", "bogus_key": 1,
                               "another": 2}))
    rc = run(["fit", "--config", cfg, studies_csv])
    assert rc == 2
    record = stderr_record(capsys)
    fields = [i["field"] for i in record["issues"]]
    assert "bogus_key" in fields and "another" in fields


def test_seed_required_for_simulation(capsys):
    rc = run(["simulate-general", "--replicates", "1"])
    assert rc == 2
    record = stderr_record(capsys)
    assert any(i["field"] == "seed" and i["message"] == "required"
               for i in record["issues"])


def test_unparseable_values_are_collected(capsys):
    rc = run(["simulate-general", "--seed", "x", "--replicates", "two"])
    assert rc == 2
    fields = {i["field"] for i in stderr_record(capsys)["issues"]}
    assert {"seed", "replicates"} <= fields


def test_bad_grid_values(studies_csv, capsys):
    rc = run(["tune", "--variant", "oec-s", "--eta-grid", "0.5,1.5",
              "--lambda-grid=-1,0", studies_csv])
    assert rc == 2
    fields = {i["field"] for i in stderr_record(capsys)["issues"]}
    assert {"eta_grid", "lambda_grid"} <= fields


def test_jobs_must_be_positive(studies_csv, capsys):
    rc = run(["fit", "--variant", "ssm", "--jobs", "0", studies_csv])
    assert rc == 2
    assert any(i["field"] == "jobs"
               for i in stderr_record(capsys)["issues"])


def test_runtime_errors_are_machine_readable(studies_csv, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"variant": "ssm", "target": "nope"}))
    rc = run(["fit", "--config", cfg, "--output-dir", tmp_path / "out",
              studies_csv])
    assert rc == 1
    record = stderr_record(capsys)
    assert record["error"] == "runtime"
    assert "nope" in record["message"]


def test_oec_variant_requires_eta(studies_csv, tmp_path, capsys):
    rc = run(["fit", "--variant", "oec-s", "--output-dir", tmp_path,
              studies_csv])
    assert rc == 1
    assert "(0, 1)" in stderr_record(capsys)["message"]


def test_manifest_for_other_command_rejected(studies_csv, tmp_path, capsys):
    manifest = tmp_path / "m.json"
    manifest.write_text(json.dumps(
        {"command": "tune", "config": {}, "versions": {}}))
    rc = run(["fit", "--variant", "ssm", "--config", manifest, studies_csv])
    assert rc == 2
    assert any("manifest" in i["message"]
               for i in stderr_record(capsys)["issues"])


# ------------------------------------------------------------ fit command


def test_fit_oec_model_artifacts(studies_csv, tmp_path, capsys):
    out = tmp_path / "out"
    rc = run(["fit", "--variant", "oec-sn", "--eta", "0.5", "--mu", "0.01",
              "--output-dir", out, studies_csv])
    assert rc == 0
    doc = read_model_json(out / "model.json")
    assert doc["kind"] == "oec"
    assert doc["variant"] == {"kind": "specialist-noreuse",
                              "target_id": "gamma"}
    assert doc["hyperparameters"]["eta"] == 0.5
    trace = np.asarray(doc["objective_trace"])
    assert np.all(np.diff(trace) <= 1e-12 * np.maximum(np.abs(trace[:-1]), 1))
    assert doc["final_objective"] == trace[-1]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "fit"
    assert manifest["config"]["variant"] == "oec-sn"
    assert set(manifest["versions"]) == {"multistudy", "numpy", "scipy",
                                         "python", "kernel_backend"}
    # reproducibility requires manifests carry no wall-clock state
    assert "time" not in json.dumps(manifest).lower()
    assert (out / "summary.txt").exists()


@pytest.mark.parametrize("variant,kind", [
    ("ssm", "linear"), ("tom", "linear"), ("mss-g", "mss"), ("mss-s", "mss")])
def test_fit_other_variants(studies_csv, tmp_path, variant, kind):
    out = tmp_path / variant
    rc = run(["fit", "--variant", variant, "--output-dir", out, studies_csv])
    assert rc == 0
    doc = read_model_json(out / "model.json")
    assert doc["kind"] == kind


def test_fit_target_and_lambda_document_keys(studies_csv, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"variant": "ssm", "target": "alpha",
                               "lambdas": {"alpha": 0.3}}))
    out = tmp_path / "out"
    rc = run(["fit", "--config", cfg, "--output-dir", out, studies_csv])
    assert rc == 0
    doc = read_model_json(out / "model.json")
    assert doc["target_id"] == "alpha"
    assert doc["hyperparameters"]["lambda"] == 0.3


def test_fit_two_study_noreuse(tmp_path):
    # smallest no-reuse setup: a single member predicts the target
    rng = np.random.default_rng(8)
    studies = [Study(sid, rng.normal(size=30) + 2.0,
                     rng.normal(size=(30, 2))) for sid in ["a", "b"]]
    data = tmp_path / "two.csv"
    write_studies_csv(data, studies)
    out = tmp_path / "out"
    rc = run(["fit", "--variant", "oec-sn", "--eta", "0.5",
              "--output-dir", out, data])
    assert rc == 0
    doc = read_model_json(out / "model.json")
    assert doc["member_ids"] == ["a"]
    trace = np.asarray(doc["objective_trace"])
    assert np.all(np.diff(trace) <= 1e-12 * np.maximum(np.abs(trace[:-1]), 1))


def test_config_precedence_oracle(studies_csv, tmp_path):
    # defaults < document < flags, field by field
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"variant": "ssm", "seed": 11, "jobs": 3,
                               "target": "beta"}))
    cases = [
        # (extra flags, field, expected resolved value)
        ([], "seed", 11),                      # document beats default
        ([], "jobs", 3),
        ([], "target", "beta"),
        ([], "output_dir", "."),               # untouched default survives
        (["--seed", "99"], "seed", 99),        # flag beats document
        (["--jobs", "1"], "jobs", 1),
    ]
    parser = cli.build_parser()
    for extra, field, expected in cases:
        args = parser.parse_args(
            ["fit", "--config", str(cfg), str(studies_csv)] + extra)
        resolved, issues = cli.resolve_config("fit", args)
        assert not issues
        assert resolved[field] == expected, (extra, field)


def test_fit_does_not_mutate_inputs(studies_csv, tmp_path):
    before = hashlib.sha256(studies_csv.read_bytes()).hexdigest()
    run(["fit", "--variant", "mss-sn", "--output-dir", tmp_path,
         studies_csv])
    assert hashlib.sha256(studies_csv.read_bytes()).hexdigest() == before


# ----------------------------------------------------------- tune command


def test_tune_artifacts(studies_csv, tmp_path):
    out = tmp_path / "out"
    rc = run(["tune", "--variant", "oec-s", "--lambda-grid", "0,0.1",
              "--eta-grid", "0.3,0.7", "--mu", "0.05",
              "--output-dir", out, studies_csv])
    assert rc == 0
    lines = (out / "cv.csv").read_text().splitlines()
    assert lines[0] == "parameter,value,fold,rmse"
    params = {line.split(",")[0] for line in lines[1:]}
    assert {"lambda[alpha]", "lambda[beta]", "lambda[gamma]", "stack_mu",
            "oec_mu", "eta[oec-s]"} <= params
    selected = json.loads((out / "selected.json").read_text())
    assert selected["stack_mu"] == 0.05 and selected["oec_mu"] == 0.05
    assert selected["etas"]["oec-s"] in (0.3, 0.7)
    assert set(selected["lambdas"]) == {"alpha", "beta", "gamma"}


def test_tune_generalist_needs_no_target(studies_csv, tmp_path):
    out = tmp_path / "out"
    rc = run(["tune", "--variant", "oec-g", "--eta-grid", "0.4",
              "--mu", "0", "--output-dir", out, studies_csv])
    assert rc == 0
    selected = json.loads((out / "selected.json").read_text())
    assert selected["etas"]["oec-g"] == 0.4


# ------------------------------------------------------ simulate commands


@pytest.fixture(scope="module")
def general_run(tmp_path_factory):
    """One tiny simulate-general run shared by the checks below."""
    out = tmp_path_factory.mktemp("sim") / "run1"
    argv = ["simulate-general", "--C", "3", "--sigma2-delta", "0",
            "--replicates", "2", "--seed", "7", "--eta-grid", "0.5",
            "--mu", "0.05", "--output-dir", out]
    rc = run(argv)
    assert rc == 0
    return argv, out


def test_simulate_general_artifacts(general_run):
    _, out = general_run
    lines = (out / "results.csv").read_text().splitlines()
    assert lines[0] == "replicate,method,rmse"
    methods = {line.split(",")[1] for line in lines[1:]}
    assert methods == {"tom", "mss-g", "oec-g"}
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0].startswith("C,sigma2_X,sigma2_delta,")
    assert "mss-g/tom" in summary[0] and "oec-g/tom" in summary[0]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7


def test_simulate_general_rerun_is_byte_identical(general_run,
                                                  tmp_path_factory):
    argv, out = general_run
    out2 = tmp_path_factory.mktemp("sim") / "run2"
    rc = run(argv[:-1] + [out2])
    assert rc == 0
    for name in ("results.csv", "summary.csv", "summary.txt"):
        assert (out / name).read_bytes() == (out2 / name).read_bytes()


def test_rerun_from_manifest_alone(general_run, tmp_path_factory):
    _, out = general_run
    out3 = tmp_path_factory.mktemp("sim") / "run3"
    rc = run(["simulate-general", "--config", out / "manifest.json",
              "--output-dir", out3])
    assert rc == 0
    assert (out / "results.csv").read_bytes() == \
        (out3 / "results.csv").read_bytes()
    m1 = json.loads((out / "manifest.json").read_text())
    m3 = json.loads((out3 / "manifest.json").read_text())
    m1["config"].pop("output_dir"), m3["config"].pop("output_dir")
    assert m1 == m3


def test_simulate_datadriven_artifacts(tmp_path):
    out = tmp_path / "dd"
    rc = run(["simulate-datadriven", "--K", "2", "--replicates", "1",
              "--seed", "5", "--eta-grid", "0.5", "--mu", "0",
              "--output-dir", out])
    assert rc == 0
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0].startswith("K,sigma2_theta,")
    assert summary[1].startswith("2,0.25,")
    header, row = summary[0].split(","), summary[1].split(",")
    assert float(row[header.index("ssm/ssm")]) == 1.0


# ----------------------------------------------------- evaluate-mortality


def test_evaluate_mortality_artifacts(mortality_files, tmp_path):
    data, hemi = mortality_files
    out = tmp_path / "mort"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"methods": ["ssm", "mss-sn", "oec-sn"],
                               "years": [2003], "eta_grid": [0.5]}))
    rc = run(["evaluate-mortality", "--config", cfg, "--output-dir", out,
              data, hemi])
    assert rc == 0
    lines = (out / "results.csv").read_text().splitlines()
    assert lines[0] == "country,test_year,method,rmse"
    assert all(line.split(",")[1] == "2003" for line in lines[1:])
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0].startswith("test_year,")
    assert "oec-sn/ssm" in summary[0]


def test_evaluate_mortality_positional_paths_checked(capsys):
    rc = run(["evaluate-mortality", "no_data.csv", "no_map.json"])
    assert rc == 2
    fields = {i["field"] for i in stderr_record(capsys)["issues"]}
    assert {"data", "hemispheres"} <= fields
