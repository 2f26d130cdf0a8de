import json

import numpy as np
import pytest

from ratiotables.cli import main
from ratiotables.conditional import fit_conditional
from ratiotables.io import read_survival_csv, write_survival_csv
from ratiotables.ratio import logrank
from ratiotables.survival import SurvivalData, build_panel

from conftest import random_survival


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def table_csv(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("stratum_id,n11,n12,n21,n22,x1\n1,2,1,1,2,1\n")
    return path


@pytest.fixture
def survival_csv(tmp_path):
    path = tmp_path / "s.csv"
    write_survival_csv(random_survival(np.random.default_rng(5), n=60), path)
    return path


def test_fit_tables_odds_mh(capsys, table_csv):
    code, out, _ = run_cli(capsys, "fit-tables", table_csv, "--weight", "mh")
    assert code == 0
    report = json.loads(out)
    assert report["estimate"][0] == pytest.approx(np.log(4), rel=1e-14)
    assert report["method"] == "mh"


def test_fit_tables_ratio(capsys, table_csv):
    code, out, _ = run_cli(capsys, "fit-tables", table_csv, "--model", "ratio")
    assert code == 0
    report = json.loads(out)
    assert report["estimate"][0] == pytest.approx(np.log(2), rel=1e-14)
    assert "cov_legacy" in report


def test_fit_tables_conditional_and_output_file(capsys, table_csv, tmp_path):
    target = tmp_path / "r.json"
    code, out, _ = run_cli(capsys, "fit-tables", table_csv, "--model", "conditional", "-o", target)
    assert code == 0 and out == ""
    assert json.loads(target.read_text())["rse"] is None


def test_fit_tables_variance_flags(capsys, table_csv):
    code, out, _ = run_cli(capsys, "fit-tables", table_csv, "--model-variance", "flanders", "--variance", "robust-simple")
    assert code == 0
    code, out, err = run_cli(capsys, "fit-tables", table_csv, "--model-variance", "legacy")
    assert code == 1 and "error" in err


def test_malformed_header(capsys, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("stratum,n11\n")
    code, _, err = run_cli(capsys, "fit-tables", path)
    assert code == 1
    assert "line 1" in err


def test_fit_error_exit_code(capsys, tmp_path):
    path = tmp_path / "sep.csv"
    path.write_text("stratum_id,n11,n12,n21,n22\n1,3,0,0,3\n")
    code, _, err = run_cli(capsys, "fit-tables", path)
    assert code == 2
    assert "Separation" in err


def test_missing_file(capsys, tmp_path):
    code, _, _ = run_cli(capsys, "fit-tables", tmp_path / "none.csv")
    assert code == 1


def test_fit_survival_report(capsys, survival_csv):
    code, out, _ = run_cli(capsys, "fit-survival", survival_csv, "--grid-step", "2", "--basis", "4")
    assert code == 0
    report = json.loads(out)
    assert len(report["estimate"]) == 2
    assert set(report["km_curves"]) == {"1", "2"}
    assert report["km_curves"]["1"]["survival"][0] == 1.0
    assert report["panel"]["J"] == len(report["panel"]["times"])


@pytest.mark.parametrize("model", ["odds", "conditional"])
def test_fit_survival_other_models(capsys, survival_csv, model):
    code, out, _ = run_cli(capsys, "fit-survival", survival_csv, "--model", model, "--weight", "mh")
    assert code == 0
    if model == "conditional":
        data = read_survival_csv(survival_csv)
        expected = fit_conditional(build_panel(data).dataset).estimate
        assert json.loads(out)["estimate"] == pytest.approx(list(expected), rel=1e-14)


def test_fit_survival_score_test_is_logrank(capsys, survival_csv):
    code, out, _ = run_cli(capsys, "fit-survival", survival_csv, "--basis", "1", "--score-test")
    assert code == 0
    tests = json.loads(out)["tests"]
    z = logrank(build_panel(read_survival_csv(survival_csv)).dataset)[0]
    assert tests["score_test"]["z"] == pytest.approx(z, rel=1e-12)
    assert tests["logrank"]["z"] == pytest.approx(z, rel=1e-15)


def test_coarse_grid_single_table_or_empty_group(capsys, tmp_path):
    path = tmp_path / "s.csv"
    write_survival_csv(SurvivalData(np.array([1.0, 2.0, 3.0, 2.5]), np.array([1, 1, 0, 1]), np.array([1, 2, 1, 2])), path)
    code, out, _ = run_cli(capsys, "fit-survival", path, "--grid-step", "10", "--model", "ratio")
    assert code == 0
    assert json.loads(out)["panel"]["J"] == 1
    path.write_text("time,status,group\n1,1,1\n2,0,1\n")
    code, _, err = run_cli(capsys, "fit-survival", path, "--grid-step", "10")
    assert code == 2 and "EmptyGroup" in err


def test_simulate_smoke(capsys, tmp_path):
    prefix = tmp_path / "out" / "smoke"
    code, out, _ = run_cli(capsys, "simulate", "smoke", "--out", prefix)
    assert code == 0
    assert "wmh" in out
    report = json.loads(prefix.with_suffix(".json").read_text())
    assert report["replicates"] == 1
    assert {r["estimator"] for r in report["rows"]} == {"mh", "wmh", "cml", "bp", "oldbp"}
    lines = prefix.with_suffix(".csv").read_text().splitlines()
    assert lines[0] == "estimator,coefficient,point,sd,bse,rse,n_ok,failures"
    assert len(lines) == 6


def test_simulate_bad_scenario(capsys):
    code, _, err = run_cli(capsys, "simulate", "nonexistent")
    assert code == 1


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "ratiotables" in capsys.readouterr().out
