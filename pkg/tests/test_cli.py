import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from morsenorm import cli
from morsenorm.checks import CheckResult
from morsenorm.flows import IntegrationError
from morsenorm.jets import Jet, PolyVectorField
from morsenorm.serialize import change_from_json, field_from_json, field_to_json

SPECS = Path(__file__).resolve().parents[1] / "specs"


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    report = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return code, report, out


def write_spec(tmp_path, data, name="spec.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_analyze_saddle(tmp_path):
    code, rep, _ = run(tmp_path, "analyze", str(SPECS / "saddle.json"))
    assert code == 0
    assert rep["spectrum"]["eigenvalues"] == [2.0, -2.0]
    assert rep["spectrum"]["morse_index"] == 1
    assert {"exponent": [2, 1], "component": 1} in rep["resonance"]["witnesses"]
    assert rep["critical_points"]["nondegenerate"] == [[0.0, 0.0]]


def test_analyze_example_field(tmp_path):
    code, rep, _ = run(tmp_path, "analyze", str(SPECS / "example_field.json"))
    assert code == 0
    assert rep["resonance"]["witnesses"] == [{"exponent": [0, 2], "component": 1}]
    assert rep["resonance"]["satisfied"] is False


def test_analyze_equal_rates_nonresonant(tmp_path):
    spec = write_spec(tmp_path, {"dimension": 2, "field": ["x1 + x2^2", "x2"], "order": 5})
    code, rep, _ = run(tmp_path, "analyze", spec)
    assert code == 0 and rep["resonance"]["satisfied"] is True


def test_report_header(tmp_path):
    path = SPECS / "saddle.json"
    code, rep, out = run(tmp_path, "analyze", str(path), "--seed", "7", "--order", "3")
    assert rep["input_hash"] == hashlib.sha256(path.read_bytes()).hexdigest()
    assert rep["seed"] == 7 and rep["spec"]["order"] == 3
    assert rep["version"] == cli.__version__
    assert "total" in json.loads((out / "timings.json").read_text())


def test_normalize_example_field_is_obstructed(tmp_path):
    code, rep, out = run(tmp_path, "normalize", str(SPECS / "example_field.json"))
    assert code == 4
    assert [(e["exponent"], e["component"]) for e in rep["normalization"]["ledger"]] == [([0, 2], 1)]
    change = json.loads((out / "change.json").read_text())
    W = field_from_json(change["normalized_field"])
    assert W.components[0] == Jet(2, 6, {(1, 0): 2, (0, 2): 2})


def test_normalize_benchmark(tmp_path):
    code, rep, out = run(tmp_path, "normalize", str(SPECS / "golden_saddle.json"))
    assert code == 0
    assert rep["normalization"]["ledger"] == []
    assert rep["normalization"]["residual"] == "V0 through order 6"
    change = json.loads((out / "change.json").read_text())
    psi = change_from_json(change["normalizing_change"])
    assert not psi.is_identity()
    for e in change["change"]["terms"]:
        assert set(e) >= {"exponent", "component", "num", "den"}


def test_normalize_linear_field_gives_identity(tmp_path):
    spec = write_spec(tmp_path, {"dimension": 2, "field": ["2*x1", "-x2"], "order": 4})
    code, rep, out = run(tmp_path, "normalize", spec)
    assert code == 0
    change = json.loads((out / "change.json").read_text())
    assert change_from_json(change["change"]).is_identity()


def test_serialization_round_trip():
    V = PolyVectorField([Jet(2, 3, {(1, 0): 0.1, (1, 1): 1 / 3}), Jet(2, 3, {(0, 1): -1.5})])
    assert field_from_json(field_to_json(V)) == V


def read_map(out):
    with open(out / "phi_map.csv") as fh:
        rows = list(csv.DictReader(fh))
    return rows


def test_conjugate_linear_field_is_identity(tmp_path):
    spec = write_spec(tmp_path, {"dimension": 2, "field": ["x1", "-2*x2"], "order": 3})
    code, rep, out = run(tmp_path, "conjugate", spec, "--grid", "-0.2:0.2:3")
    assert code == 0
    assert rep["flow"]["exit"]["residual"]["max"] <= 1e-10
    for r in read_map(out):
        assert abs(float(r["phi_exit_1"]) - float(r["x1"])) <= 1e-10
        assert abs(float(r["phi_exit_2"]) - float(r["x2"])) <= 1e-10


def test_conjugate_benchmark_and_unstable_row(tmp_path):
    code, rep, out = run(tmp_path, "conjugate", str(SPECS / "golden_saddle.json"), "--grid", "-0.2:0.2:5")
    assert code == 0
    assert rep["flow"]["exit"]["residual"]["max"] <= 1e-6
    assert rep["flow"]["field"] == "as given"
    rows = [r for r in read_map(out) if float(r["x2"]) == 0.0]
    assert rows and all(r["phi_exit_1"] == r["x1"] and float(r["phi_exit_2"]) == 0.0 for r in rows)


def test_conjugate_uses_block_chart_when_needed(tmp_path):
    code, rep, out = run(tmp_path, "conjugate", str(SPECS / "cubic_saddle.json"), "--grid", "-0.1:0.1:3")
    assert code == 0
    assert rep["flow"]["field"] == "block-flattened"
    assert (out / "chart.json").exists()


def test_conjugate_both_methods_and_trajectories(tmp_path):
    code, rep, out = run(tmp_path, "conjugate", str(SPECS / "golden_saddle.json"),
                         "--grid", "-0.2:0.2:3", "--method", "both")
    assert code == 0
    assert rep["flow"]["cross_method_max_deviation"] <= 5e-6
    assert rep["flow"]["fixedpoint"]["contraction_ratio"]["max"] < 1
    trajs = sorted(out.glob("traj_*.csv"))
    assert len(trajs) == 9
    head = trajs[0].read_text().splitlines()[0]
    assert head == "t,u1,u2"


def test_fixedpoint_command_records_parameters(tmp_path):
    code, rep, _ = run(tmp_path, "fixedpoint", str(SPECS / "golden_saddle.json"),
                       "--grid", "0.1:0.2:2", "--delta", "20", "--tmax", "10")
    assert code == 0
    fp = rep["flow"]["fixedpoint"]
    assert fp["delta"] == 20.0 and fp["t_max"] == 10.0 and fp["delta"] > fp["delta_min"]


def test_reports_are_deterministic(tmp_path, monkeypatch):
    args = ("conjugate", str(SPECS / "golden_saddle.json"), "--grid", "-0.2:0.2:4")
    monkeypatch.setenv("MORSENORM_THREADS", "1")
    _, _, a = run(tmp_path, *args, name="a")
    monkeypatch.setenv("MORSENORM_THREADS", "3")
    _, _, b = run(tmp_path, *args, name="b")
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "phi_map.csv").read_bytes() == (b / "phi_map.csv").read_bytes()
    _, _, c = run(tmp_path, "normalize", str(SPECS / "cubic_saddle.json"), name="c")
    _, _, d = run(tmp_path, "normalize", str(SPECS / "cubic_saddle.json"), name="d")
    assert (c / "report.json").read_bytes() == (d / "report.json").read_bytes()
    assert (c / "change.json").read_bytes() == (d / "change.json").read_bytes()


def test_verify_shipped_specs(tmp_path, capsys):
    code, rep, _ = run(tmp_path, "verify", str(SPECS / "golden_saddle.json"))
    assert code == 0
    assert all(c["status"] != "FAIL" for c in rep["checks"])
    code, rep, _ = run(tmp_path, "verify", str(SPECS / "example_field.json"), name="ex")
    assert code == 0
    status = {c["name"]: c["status"] for c in rep["checks"]}
    assert status["normalization_soundness"] == "SKIPPED"
    assert status["obstruction_completeness"] == "PASS"


def test_verify_reports_failures(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr("morsenorm.checks.CHECKS", [lambda prep, rng: CheckResult("always_fails", "FAIL", "x")])
    code, rep, _ = run(tmp_path, "verify", str(SPECS / "saddle.json"))
    assert code == 1
    assert "always_fails" in capsys.readouterr().err


@pytest.mark.parametrize("data", [
    "{not json",
    {"dimension": 2, "field": ["x1 +", "x2"]},
    {"dimension": 2, "function": "x1^2", "bump": {"inner": 2.0, "outer": 1.0}},
])
def test_spec_errors_exit_2(tmp_path, data):
    p = tmp_path / "bad.json"
    p.write_text(data if isinstance(data, str) else json.dumps(data))
    code, rep, _ = run(tmp_path, "verify", str(p))
    assert code == 2 and rep is None


def test_missing_file_and_bad_grid_exit_2(tmp_path):
    assert cli.main(["analyze", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    code, _, _ = run(tmp_path, "conjugate", str(SPECS / "golden_saddle.json"), "--grid", "-0.9:0.9:3")
    assert code == 2
    code, _, _ = run(tmp_path, "conjugate", str(SPECS / "golden_saddle.json"), "--grid", "0:1")
    assert code == 2


def test_degenerate_exit_3(tmp_path):
    spec = write_spec(tmp_path, {"dimension": 2, "function": "x1^2 + x2^4"})
    code, _, _ = run(tmp_path, "analyze", spec)
    assert code == 3


def test_failed_points_exit_5(tmp_path, monkeypatch):
    def broken(*a, **k):
        raise IntegrationError("forced failure")
    monkeypatch.setattr(cli, "conjugacy_phi", broken)
    code, rep, out = run(tmp_path, "conjugate", str(SPECS / "golden_saddle.json"), "--grid", "-0.1:0.1:2")
    assert code == 5
    assert rep["flow"]["failed_points"] == 4
    assert all(r["ok"] == "0" for r in read_map(out))


def test_grid_parser():
    X = cli.parse_grid("-1:1:3,0:0.5:2", 2, 1.0)
    assert X.shape == (6, 2)
    assert np.allclose(sorted(set(X[:, 1])), [0.0, 0.5])
    assert cli.parse_grid(None, 2, 0.5).shape == (121, 2)
