from pathlib import Path

import pytest

from morsenorm.checks import run_checks
from morsenorm.parser import load_problem
from morsenorm.pipeline import prepare

SPECS = Path(__file__).resolve().parents[1] / "specs"


@pytest.mark.parametrize("name", ["saddle", "golden_saddle", "cubic_saddle", "tilted_metric", "example_field"])
def test_shipped_specs_have_no_failures(name):
    results = run_checks(prepare(load_problem(SPECS / f"{name}.json")), seed=0)
    assert {r.status for r in results} <= {"PASS", "SKIPPED"}
    assert any(r.status == "PASS" for r in results)


def test_resonant_spec_skips_normalization_checks():
    results = {r.name: r for r in run_checks(prepare(load_problem(SPECS / "example_field.json")), seed=0)}
    for name in ("normalization_soundness", "normalization_idempotence", "manifold_flatness"):
        assert results[name].status == "SKIPPED" and results[name].detail


def test_morse_check_only_for_functions():
    results = {r.name: r.status for r in run_checks(prepare(load_problem(SPECS / "saddle.json")), seed=0)}
    assert results["morse_lemma"] == "PASS"
    assert results["eigenvalue_invariance"] == "PASS"
    results = {r.name: r.status for r in run_checks(prepare(load_problem(SPECS / "golden_saddle.json")), seed=0)}
    assert results["morse_lemma"] == "SKIPPED"
