import json
import math

import pytest

from drosub.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def facility_file(tmp_path):
    path = tmp_path / "fac.csv"
    assert run("data", "generate", path, "--kind", "facility", "--n", 6, "--size", 7, "--seed", 3) == 0
    return path


def test_chi2_oracle(tmp_path, capsys):
    values = tmp_path / "z.txt"
    values.write_text("0\n1\n")
    assert run("chi2", "oracle", "--rho", 0.5, "--values", values) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["value"] == pytest.approx(0.5 - math.sqrt(0.125), abs=1e-12)
    assert set(out) == {"value", "p", "m", "lambda", "theta", "tight"}


def test_chi2_project(tmp_path):
    values = tmp_path / "w.txt"
    values.write_text("1 0 0")
    out = tmp_path / "p.json"
    assert run("chi2", "project", "--rho", 0.2, "--values", values, "--out", out) == 0
    p = json.loads(out.read_text())["p"]
    assert p[0] == pytest.approx(1 / 3 + 2 / 3 / math.sqrt(15))


def test_data_load(facility_file, tmp_path, capsys):
    assert run("data", "load", facility_file) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["kind"] == "facility" and info["n"] == 6 and info["ground_size"] == 7
    inf = tmp_path / "g.txt"
    assert run("data", "generate", inf, "--kind", "influence", "--n", 4, "--size", 12, "--q", 0.5) == 0
    assert run("data", "load", inf) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["kind"] == "influence" and info["n"] == 4


@pytest.mark.parametrize("alg", ["mfw", "fw", "equator", "ogd"])
def test_solve_each_algorithm(alg, facility_file, tmp_path):
    out = tmp_path / f"{alg}.json"
    assert run("solve", "--alg", alg, "--rho", 1.0, "--k", 2, "--T", 8, "--data", facility_file, "--out", out) == 0
    res = json.loads(out.read_text())
    assert res["alg"] == alg and res["config"]["k"] == 2 and "wall_time" not in res
    assert 0 <= res["robust_value"]


def test_record_time(facility_file, tmp_path):
    out = tmp_path / "r.json"
    run("solve", "--rho", 1.0, "--k", 2, "--T", 3, "--data", facility_file, "--out", out, "--record-time")
    assert "wall_time" in json.loads(out.read_text())


def test_round(facility_file, tmp_path):
    run_json = tmp_path / "run.json"
    run("solve", "--rho", 1.0, "--k", 3, "--T", 10, "--data", facility_file, "--out", run_json)
    dist = tmp_path / "dist.json"
    assert run("round", "--x", run_json, "--count", 25, "--out", dist) == 0
    d = json.loads(dist.read_text())
    assert len(d["subsets"]) == 25 and sum(d["weights"]) == pytest.approx(1.0)
    assert all(len(s) == 3 for s in d["subsets"])
    assert "robust_value" in d


def test_round_rejects_ogd_output(facility_file, tmp_path):
    run_json = tmp_path / "ogd.json"
    run("solve", "--alg", "ogd", "--rho", 1.0, "--k", 2, "--T", 4, "--data", facility_file, "--out", run_json)
    assert run("round", "--x", run_json, "--out", tmp_path / "d.json") == 2


def test_experiment(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"ground_size": 6, "k": 2, "n_train": 5, "n_test": 10, "trials": 2,
                               "solver": {"T": 10, "round_count": 10}}))
    assert run("experiment", "--config", cfg, "--out", tmp_path / "res", "--threads", 2) == 0
    assert (tmp_path / "res" / "trials.csv").exists()
    assert json.loads((tmp_path / "res" / "summary.json").read_text())["trials"] == 2


def test_errors_exit_nonzero(tmp_path, capsys):
    assert run("chi2", "oracle", "--rho", 1.0, "--values", tmp_path / "missing.txt") == 2
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.txt"
    bad.write_text("1 2")
    assert run("chi2", "oracle", "--rho", -1.0, "--values", bad) == 2
