import csv
import json

import numpy as np
import pytest

from robmaint import cli
from robmaint.model import load_ensemble, read_dataset_csv


def run(*argv, environ=None):
    return cli.dispatch(list(argv), environ={} if environ is None else environ)


def test_help_exits_zero(capsys):
    assert run("--help") == 0
    assert "usage" in capsys.readouterr().out


def test_unknown_flag_is_usage_error(capsys):
    assert run("solve", "--bogus", "1") == 1
    assert "usage" in capsys.readouterr().err


def test_missing_required_setting(tmp_path):
    assert run("solve", "--output-dir", str(tmp_path)) == 1


def test_config_layering(tmp_path):
    cfg_file = tmp_path / "c.yaml"
    cfg_file.write_text("seed: 3\nevaluate:\n  n_sims: 10\n  horizon: 7\n")
    env = {"ROBMAINT_HORIZON": "9"}
    cfg = cli.resolve_config("evaluate", {"n_sims": 20}, env, str(cfg_file))
    assert (cfg["seed"], cfg["n_sims"], cfg["horizon"]) == (3, 20, 9)


def test_unknown_config_key(tmp_path):
    cfg_file = tmp_path / "c.yaml"
    cfg_file.write_text("solve:\n  nope: 1\n")
    with pytest.raises(cli.UsageError):
        cli.resolve_config("solve", {}, {}, str(cfg_file))
    assert run("--config", str(cfg_file), "solve") == 1


def test_bad_dataset_reports_line(tmp_path, capsys):
    bad = tmp_path / "d.csv"
    bad.write_text("series_id,t,action,fractal_value\na,0,-1,-0.1\na,1,0,zzz\n")
    assert run("infer", "--dataset", str(bad), "--output", str(tmp_path / "e.npz")) == 1
    assert "line 3" in capsys.readouterr().err


def test_runtime_failure_exit_two(monkeypatch, tmp_path):
    def boom(cfg):
        raise RuntimeError("simulated failure")

    monkeypatch.setitem(cli.COMMANDS, "solve", boom)
    assert run("solve", "--ensemble", str(tmp_path / "x.npz")) == 2


def test_fractal_subcommand(tmp_path):
    level = tmp_path / "level.csv"
    x = np.arange(0, 152.01, 0.25)
    with open(level, "w") as fh:
        fh.write("position_m,level_mm\n")
        for xi in x:
            fh.write(f"{float(xi)!r},{float(np.sin(xi)):.6f}\n")
    out = tmp_path / "fv.csv"
    assert run("fractal", "--input", str(level), "--output", str(out)) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["window_start_m", "fv_short", "fv_mid", "fv_long"]
    assert len(rows) == 4
    assert json.loads((tmp_path / "fv.csv.manifest.json").read_text())["subcommand"] == "fractal"


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    data = d / "data.csv"
    assert run("simulate", "--seed", "1", "--n-series", "10", "--length", "6", "--output", str(data)) == 0
    ens = d / "ens.npz"
    assert run(
        "infer", "--dataset", str(data), "--chains", "2", "--burnin", "8",
        "--samples", "6", "--seed", "2", "--output", str(ens),
    ) == 0
    assert run("solve", "--ensemble", str(ens), "--output-dir", str(d / "solve")) == 0
    assert run("solve", "--ensemble", str(ens), "--horizon", "5", "--output-dir", str(d / "solve5")) == 0
    ev = d / "eval.csv"
    assert run(
        "evaluate", "--ensemble", str(ens), "--n-sims", "40", "--horizon", "8",
        "--planning-size", "5", "--seed", "3", "--output-csv", str(ev),
    ) == 0
    trace = d / "trace.csv"
    assert run(
        "plan", "--ensemble", str(ens), "--horizon", "5", "--replicates", "2",
        "--true-percentile", "50", "--trace", str(trace),
    ) == 0
    return d


def test_pipeline_outputs(pipeline):
    ds = read_dataset_csv(pipeline / "data.csv")
    assert len(ds) == 10
    assert (pipeline / "data.csv.params.json").exists()
    ens = load_ensemble(pipeline / "ens.npz")
    assert len(ens) == 12
    diag = json.loads((pipeline / "ens.npz.diagnostics.json").read_text())
    assert "rhat" in diag
    pol = json.loads((pipeline / "solve" / "policy.json").read_text())
    assert len(pol["robust_policy"]) == 4
    pol5 = json.loads((pipeline / "solve5" / "policy.json").read_text())
    assert np.shape(pol5["robust_policy"]) == (5, 4)
    counts = list(csv.reader(open(pipeline / "solve" / "optimality_counts.csv")))
    assert counts[0] == ["state", "a0", "a1", "a2"]
    assert all(sum(map(int, r[1:])) == 12 for r in counts[1:])
    rows = list(csv.reader(open(pipeline / "eval.csv")))
    assert rows[0] == ["policy", "mean", "se", "hdi_lo", "hdi_hi"]
    assert len(rows) == 1 + 8
    trace = list(csv.reader(open(pipeline / "trace.csv")))
    assert trace[0][:3] == ["replicate", "t", "z"]
    assert len(trace) == 1 + 2 * 6


def test_manifest_contents(pipeline):
    m = json.loads((pipeline / "eval.csv.manifest.json").read_text())
    assert m["seed"] == 3
    assert m["config"]["n_sims"] == 40
    assert {"numpy", "scipy", "robmaint"} <= set(m["versions"])


def test_manifest_replay_is_byte_identical(pipeline):
    before = (pipeline / "eval.csv").read_bytes()
    other = pipeline / "again.csv"
    manifest = str(pipeline / "eval.csv.manifest.json")
    assert run("--config", manifest, "evaluate", "--output-csv", str(other)) == 0
    assert other.read_bytes() == before
    data_before = (pipeline / "data.csv").read_bytes()
    again = pipeline / "data2.csv"
    assert run("--config", str(pipeline / "data.csv.manifest.json"), "simulate", "--output", str(again)) == 0
    assert again.read_bytes() == data_before


def test_manifest_for_other_subcommand_rejected(pipeline):
    assert run("--config", str(pipeline / "eval.csv.manifest.json"), "solve") == 1


def test_inputs_not_mutated(pipeline):
    ens_path = pipeline / "ens.npz"
    before = ens_path.read_bytes()
    assert run("solve", "--ensemble", str(ens_path), "--output-dir", str(pipeline / "solve_again")) == 0
    assert ens_path.read_bytes() == before


def test_simulate_from_ensemble_member(pipeline, tmp_path):
    out = tmp_path / "d.csv"
    args = ["simulate", "--source", "ensemble", "--ensemble", str(pipeline / "ens.npz"), "--index", "3"]
    assert run(*args, "--n-series", "3", "--length", "4", "--output", str(out)) == 0
    assert len(read_dataset_csv(out)) == 3
