import csv
import json

import numpy as np
import pytest

from meshdispatch.dispatch import run_policy
from meshdispatch.generate import GenParams, generate_scenario
from meshdispatch.harness import (RESULT_COLUMNS, SUMMARY_COLUMNS, TRACE_COLUMNS, ExperimentConfig,
                                  ExperimentResult, apply_axis, export_results, export_summary, export_trace,
                                  load_results, run_experiment, summary_row, worker_count)
from meshdispatch.mesh import available_units, dumps_scenario, validate_scenario

SMALL = GenParams(nodes=3, slots=6, job_count=5)


# -- generation -------------------------------------------------------------

def test_defaults_match_setup():
    p = GenParams()
    assert (p.nodes, p.slots, p.slot_minutes, p.job_count, p.arrival_rate) == (10, 24, 60.0, 20, 2.03)
    assert (p.capacity_mu, p.capacity_sigma, p.workload_mu, p.workload_sigma) == (20, 2, 18, 3)
    assert (p.cap_mu, p.cap_sigma, p.coeff_range, p.beta_range) == (7, 1, (1.0, 3.0), (0.1, 0.5))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("family", ["linear", "log", "poly"])
def test_generated_scenarios_validate(seed, family):
    sc = generate_scenario(GenParams(seed=seed, utility_family=family))
    assert validate_scenario(sc) == []
    assert len(sc.jobs) == 20


def test_integral_generation_validates():
    sc = generate_scenario(GenParams(seed=3, integral=True))
    assert validate_scenario(sc, integral=True) == []


def test_determinism_and_seed_sensitivity():
    a, b = generate_scenario(GenParams(seed=0)), generate_scenario(GenParams(seed=0))
    assert dumps_scenario(a) == dumps_scenario(b)
    c = generate_scenario(GenParams(seed=1))
    assert [j.arrival for j in a.jobs] != [j.arrival for j in c.jobs]


def test_per_node_draws_shared_across_slots():
    sc = generate_scenario(GenParams(seed=2))
    for job in sc.jobs:
        for (k, t), cap in job.caps.items():
            first = min(u for u in job.caps if u[0] == k)
            assert job.betas[(k, t)] == job.betas[first]
            if cap < sc.mesh.capacity[(k, t)] and job.caps[first] < sc.mesh.capacity[first]:
                assert cap == job.caps[first]


def test_generated_ranges():
    sc = generate_scenario(GenParams(seed=4, job_count=200, slots=48))
    for job in sc.jobs:
        assert 1.0 <= job.utility.coeff <= 3.0
        assert all(0.1 <= b <= 0.5 for b in job.betas.values())
        assert job.workload >= 0.5
        assert job.deadline <= sc.mesh.horizon
        assert job.eligible_nodes == frozenset(range(10))


def test_locality_subsamples_nodes():
    sc = generate_scenario(GenParams(seed=4, locality=0.3))
    assert any(len(j.eligible_nodes) < 10 for j in sc.jobs)
    assert all(j.eligible_nodes for j in sc.jobs)
    assert validate_scenario(sc) == []


def test_arrival_rate_shapes_arrivals():
    # with far more slots than jobs at rate 2.03, arrivals pack into the first slots
    sc = generate_scenario(GenParams(seed=0, slots=240, job_count=20))
    assert max(j.arrival for j in sc.jobs) < 60 * 30


@pytest.mark.parametrize("bad", [{"nodes": 0}, {"arrival_rate": 0}, {"coeff_range": (3, 1)},
                                 {"utility_family": "cubic"}, {"locality": 0.0}, {"workload_sigma": -1}])
def test_invalid_params(bad):
    with pytest.raises(ValueError):
        GenParams(**bad)


# -- experiments ------------------------------------------------------------

def test_apply_axis():
    assert apply_axis(SMALL, "duration", 6).duration_mean_slots == 6
    assert apply_axis(SMALL, "workload", 24).workload_mu == 24
    c = apply_axis(SMALL, "congestion", 2)
    assert (c.workload_mu, c.capacity_mu) == (36, 10)
    with pytest.raises(ValueError):
        apply_axis(SMALL, "speed", 1)


def test_row_count_and_means():
    cfg = ExperimentConfig("duration", (2, 4), tuple(range(3)), base=SMALL)
    res = run_experiment(cfg, workers=1)
    assert len(res.rows) == 2 * 3 * 3
    assert not res.failures
    means = res.means()
    assert set(means) == {(v, p) for v in (2, 4) for p in cfg.policies}
    for (v, p), (mean, se, n) in means.items():
        vals = [r.welfare_total for r in res.rows if r.sweep_value == v and r.policy == p]
        assert mean == pytest.approx(np.mean(vals)) and n == 3
        assert se == pytest.approx(np.std(vals, ddof=1) / np.sqrt(3))


def test_rows_match_direct_runs():
    cfg = ExperimentConfig("workload", (12,), (5,), policies=("max_first",), base=SMALL)
    row = run_experiment(cfg, workers=1).rows[0]
    tr = run_policy(generate_scenario(SMALL.replace(workload_mu=12, seed=5)), "max_first")
    assert row.welfare_total == tr.welfare_total and row.rejected == tr.rejected_count


def test_parallel_matches_serial(monkeypatch):
    cfg = ExperimentConfig("congestion", (1, 2), (0, 1), base=SMALL)
    serial = run_experiment(cfg, workers=1).rows
    monkeypatch.setenv("MESHDISPATCH_THREADS", "2")
    assert worker_count() == 2
    assert run_experiment(cfg).rows == serial


def test_failures_recorded_not_raised():
    cfg = ExperimentConfig("congestion", (1, -1), (0,), base=SMALL)
    res = run_experiment(cfg, workers=1)
    assert len(res.rows) == 6
    assert len(res.failures) == 3 and all("congestion" in r.error for r in res.failures)


def test_bad_config():
    with pytest.raises(ValueError):
        ExperimentConfig("speed", (1,), (0,))
    with pytest.raises(ValueError):
        ExperimentConfig("duration", (1,), (0,), policies=("random",))


# -- export -----------------------------------------------------------------

def test_csv_export(tmp_path):
    res = run_experiment(ExperimentConfig("duration", (4,), (0, 1), base=SMALL), workers=1)
    path = export_results(res, "csv", tmp_path / "r.csv")
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == RESULT_COLUMNS
    assert len(rows) == len(res.rows) + 1
    assert float(rows[1][6]) == pytest.approx(res.rows[0].welfare_total, rel=1e-11)


def test_empty_csv(tmp_path):
    path = export_results(ExperimentResult(), "csv", tmp_path / "e.csv")
    assert path.read_text().strip() == ",".join(RESULT_COLUMNS)


def test_json_round_trip(tmp_path):
    res = run_experiment(ExperimentConfig("duration", (4,), (0,), base=SMALL), workers=1)
    path = export_results(res, "json", tmp_path / "r.json")
    back = load_results(path)
    again = export_results(back, "json", tmp_path / "r2.json")
    assert path.read_text() == again.read_text()
    assert back.metadata["axis"] == "duration" and "version" in back.metadata
    for a, b in zip(res.rows, back.rows):
        assert b.welfare_total == pytest.approx(a.welfare_total, rel=1e-11)


def test_export_errors(tmp_path):
    with pytest.raises(ValueError):
        export_results(ExperimentResult(), "xml", tmp_path / "x")
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="cannot write"):
        export_results(ExperimentResult(), "csv", blocker / "sub" / "r.csv")


def test_trace_and_summary_export(tmp_path):
    sc = generate_scenario(SMALL.replace(seed=3))
    tr = run_policy(sc, "onsocmax")
    rows = list(csv.reader(export_trace(sc, tr, tmp_path / "t.csv").open()))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) - 1 == sum(len(available_units(j, sc.mesh)) for j in sc.jobs)
    total = sum(float(r[5]) + float(r[6]) for r in rows[1:])
    assert total == pytest.approx(tr.welfare_total, rel=1e-9)
    rows = list(csv.reader(export_summary([summary_row(sc, tr)], tmp_path / "s.csv").open()))
    assert tuple(rows[0]) == SUMMARY_COLUMNS and rows[1][0] == "onsocmax"
