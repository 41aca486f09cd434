import csv
import json
import math

import numpy as np
import pytest

from twostage_knn import experiment
from twostage_knn.cli import main
from twostage_knn.experiment import (
    ConfigError,
    emit_results,
    load_results,
    parse_config,
    run_suite,
    trials_csv,
)

TINY = """
[experiment]
seed = 5
trials = {trials}
mc_points = 1000
suites = {suites}
witness_size = 500
unlabeled_budget = 500

[distribution]
name = uniform1d-linear

[params]
delta = 0.2
c1 = 0.5

[schedule]
points =
    300 300 20
    300 600 20
    50 50 40

[event_rates]
samplings = 100
"""


def tiny(trials=2, suites="passive, active"):
    return parse_config(TINY.format(trials=trials, suites=suites))


@pytest.fixture(scope="module")
def bundle():
    return run_suite(tiny(suites="passive, active, containment, event_rates"))


def test_zero_trials_gives_empty_bundle(tmp_path):
    b = run_suite(tiny(trials=0))
    assert b.records == [] and b.aggregates == {}
    emit_results(b, tmp_path)
    prov = json.loads((tmp_path / "provenance.json").read_text())
    assert len(prov["config_sha256"]) == 64 and prov["timestamp"]
    assert (tmp_path / "trials.csv").read_text().count("\n") == 1


def test_row_count_and_skips(bundle):
    assert len(bundle.records) == 4 * 3 * 2
    skipped = [r for r in bundle.records if r.status == "skipped"]
    assert {r.schedule_index for r in skipped} == {2}
    assert all("k_bar" in r.skip_reason for r in skipped)
    assert all(r.labels_used <= r.n + r.m for r in bundle.records)


def test_rerun_is_byte_identical(bundle, tmp_path):
    again = run_suite(tiny(suites="passive, active, containment, event_rates"), threads=2)
    assert trials_csv(again.records) == trials_csv(bundle.records)


def test_round_trip(bundle, tmp_path):
    emit_results(bundle, tmp_path)
    loaded = load_results(tmp_path)
    assert trials_csv(loaded.records) == trials_csv(bundle.records)
    assert loaded.aggregates == json.loads(json.dumps(experiment._jsonable(bundle.aggregates)))
    assert loaded.criteria == json.loads(json.dumps(experiment._jsonable(bundle.criteria)))


def test_aggregates_match_independent_recomputation(bundle, tmp_path):
    emit_results(bundle, tmp_path)
    with open(tmp_path / "trials.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    summary = json.loads((tmp_path / "summary.json").read_text())["aggregates"]
    vals = [float(r["disagreement_active"]) for r in rows
            if r["suite"] == "active" and r["schedule_index"] == "1" and r["status"] == "ok"]
    agg = summary["active/1"]["disagreement_active"]
    assert agg["count"] == len(vals) == 2
    assert agg["mean"] == pytest.approx(float(np.mean(vals)), rel=1e-15)
    assert agg["median"] == pytest.approx(float(np.median(vals)), rel=1e-15)


def test_tampered_summary_is_rejected(bundle, tmp_path):
    emit_results(bundle, tmp_path)
    path = tmp_path / "summary.json"
    data = json.loads(path.read_text())
    data["aggregates"]["passive/0"]["disagreement_passive"]["mean"] += 1e-9
    path.write_text(json.dumps(data))
    with pytest.raises(ValueError):
        load_results(tmp_path)


def test_floats_round_trip_exactly(bundle, tmp_path):
    emit_results(bundle, tmp_path)
    loaded = load_results(tmp_path)
    for a, b in zip(bundle.records, loaded.records):
        for name in ("disagreement_passive", "boundary_mass_bound"):
            x, y = getattr(a, name), getattr(b, name)
            assert (math.isnan(x) and math.isnan(y)) or x == y


def test_trial_failure_is_recorded(monkeypatch):
    def boom(*args, **kw):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(experiment, "run_algorithm1", boom)
    b = run_suite(tiny(trials=1, suites="active, passive"))
    failed = [r for r in b.records if r.status == "error"]
    assert failed and all("synthetic failure" in r.skip_reason for r in failed)
    assert any(r.status == "ok" and r.suite == "passive" for r in b.records)


@pytest.mark.parametrize("text", [
    TINY.replace("seed = 5\n", ""),
    TINY.replace("name = uniform1d-linear", "name = nope"),
    TINY.replace("{suites}", "magic"),
    TINY.replace("300 300 20", "300 300"),
    TINY.replace("[params]", "[params]\nbogus = 1"),
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text.format(trials=1, suites="active"))


def test_cli_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY.format(trials=2, suites="passive"))
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert "PASS" in capsys.readouterr().out
    assert (tmp_path / "o" / "trials.csv").exists()
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert main(["run", str(tmp_path / "missing.ini"), "--out", str(tmp_path / "x")]) == 1
    assert main(["run", str(cfg), "--out", str(tmp_path / "y"), "--suite", "active"]) == 1


def test_cli_reports_failed_criteria(tmp_path, monkeypatch):
    cfg = tmp_path / "c.ini"
    # every trial violates its bound; 30 trials keep the three-sigma slack below 1
    cfg.write_text(TINY.format(trials=30, suites="passive"))
    monkeypatch.setattr(experiment, "run_passive_baseline",
                        lambda *a, **k: {"disagreement_passive": 0.5, "excess_risk_passive": 0.1,
                                         "boundary_mass_bound": 0.0, "labels_used": 600})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_suite_flag_restricts(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY.format(trials=1, suites="passive, active"))
    assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--suite", "passive"]) == 0
    rows = (tmp_path / "o" / "trials.csv").read_text().splitlines()[1:]
    assert rows and all(r.startswith("passive,") for r in rows)
