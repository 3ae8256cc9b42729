import dataclasses
import math
from types import SimpleNamespace

import numpy as np
import pytest

from meshdispatch import oracle
from meshdispatch.dispatch import run_policy
from meshdispatch.generate import GenParams, generate_scenario
from meshdispatch.mesh import build_mesh
from meshdispatch.oracle import brute_force_optimum, competitive_ratio, offline_optimum, scenario_ratio
from meshdispatch.pricing import build_curves
from meshdispatch.solver import PseudoWelfareProblem, solve_pseudo_welfare
from meshdispatch.utility import job_utility, cluster_utility

from conftest import make_job, make_scenario, random_small_scenario


def test_single_job_matches_unpriced_solver():
    for family in ("linear", "log", "poly"):
        sc = generate_scenario(GenParams(nodes=3, slots=6, job_count=1, utility_family=family, seed=11))
        job = sc.jobs[0]
        # a zero price: tiny flat curve
        curves = build_curves(dict(sc.mesh.capacity), 1e-12, 1e-12)
        p = PseudoWelfareProblem(job, list(job.caps), curves, {u: 0.0 for u in sc.mesh.capacity})
        alloc = solve_pseudo_welfare(p)
        off = offline_optimum(sc)
        assert off.welfare == pytest.approx(alloc.welfare, rel=1e-3)


def test_disjoint_jobs_separable():
    mesh = build_mesh(2, 2, 60, [6, 7, 8, 9])
    a = make_job(mesh, id=0, arrival=0, deadline=59, family="log", coeff=2.0, workload=9.0, cap=5.0, nodes={0, 1})
    b = make_job(mesh, id=1, arrival=60, deadline=119, family="poly", coeff=1.5, workload=9.0, cap=5.0, nodes={0, 1})
    both = offline_optimum(make_scenario(mesh, [a, b])).welfare
    one = offline_optimum(make_scenario(mesh, [a])).welfare + offline_optimum(make_scenario(mesh, [b])).welfare
    assert both == pytest.approx(one, rel=1e-6)


def test_two_jobs_two_units_linear_vs_brute_force():
    mesh = build_mesh(2, 1, 60, [4.0, 5.0])
    jobs = [make_job(mesh, id=0, coeff=1.0, workload=6.0, cap=4.0, beta=0.3),
            make_job(mesh, id=1, coeff=2.0, workload=3.0, cap=3.0, beta=0.1)]
    sc = make_scenario(mesh, jobs)
    off = offline_optimum(sc).welfare
    brute = brute_force_optimum(sc, 0.05)
    assert brute <= off + 1e-9
    assert off == pytest.approx(brute, rel=1e-2)


def test_brute_force_trivial():
    mesh = build_mesh(1, 1, 60, [1.0])
    job = make_job(mesh, coeff=1.0, workload=1.0, cap=1.0, beta=1e-300)
    assert brute_force_optimum(make_scenario(mesh, [job]), 0.5) == pytest.approx(1.0)


def test_brute_force_everything_infeasible():
    mesh = build_mesh(1, 1, 60, [1.0])
    job = make_job(mesh, coeff=1.0, workload=0.4, cap=1.0)
    assert brute_force_optimum(make_scenario(mesh, [job]), 0.5) == 0.0


def test_brute_force_limits():
    sc = generate_scenario(GenParams(nodes=3, slots=6, job_count=3))
    with pytest.raises(ValueError, match="limited"):
        brute_force_optimum(sc, 0.5)
    mesh = build_mesh(2, 1, 60, [10.0, 10.0])
    big = make_scenario(mesh, [make_job(mesh, id=i, cap=10.0) for i in range(3)])
    with pytest.raises(ValueError, match="grid has"):
        brute_force_optimum(big, 0.001)
    mesh = build_mesh(1, 1, 60, [1.0])
    with pytest.raises(ValueError):
        brute_force_optimum(make_scenario(mesh, [make_job(mesh)]), 0.0)


def test_random_small_vs_brute_force(rng):
    for _ in range(10):
        sc = random_small_scenario(rng, max_dim=4)
        step = 0.2
        off = offline_optimum(sc)
        brute = brute_force_optimum(sc, step)
        dim = sum(len(j.caps) for j in sc.jobs)
        upsilon = max(j.utility.deriv(0.01 if j.utility.family == "poly" else 0.0) for j in sc.jobs) + 1.0
        assert brute <= off.welfare + 1e-6
        # sqrt is not Lipschitz at 0; allow its own sqrt(step) grid error
        slack = upsilon * dim * step + sum(j.utility.coeff * math.sqrt(step) * len(j.caps)
                                          for j in sc.jobs if j.utility.family == "poly")
        assert off.welfare <= brute + slack
        assert off.upper_bound >= off.welfare - 1e-9
        assert off.gap <= 1e-4 * max(1.0, off.welfare)


def test_offline_feasible_and_certified():
    sc = generate_scenario(GenParams(nodes=4, slots=8, job_count=10, capacity_mu=4.0,
                                     utility_family="log", seed=5))
    off = offline_optimum(sc)
    jobs = {j.id: j for j in sc.jobs}
    load = {}
    per_job = {}
    for (n, u), v in off.x.items():
        assert -1e-12 <= v <= jobs[n].caps[u] + 1e-12
        load[u] = load.get(u, 0.0) + v
        per_job[n] = per_job.get(n, 0.0) + v
    assert all(load[u] <= sc.mesh.capacity[u] + 1e-9 for u in load)
    assert all(per_job[n] <= jobs[n].workload + 1e-9 for n in per_job)
    total = sum(job_utility(j, {u: off.x[(j.id, u)] for u in j.caps}) +
                cluster_utility(j, sc.mesh, {u: off.x[(j.id, u)] for u in j.caps}) for j in sc.jobs)
    assert total == pytest.approx(off.welfare, rel=1e-12)
    assert off.converged and off.gap <= 1e-5 * off.welfare


def test_offline_permutation_invariant():
    sc = generate_scenario(GenParams(nodes=3, slots=6, job_count=6, capacity_mu=4.0, utility_family="poly", seed=8))
    order = np.random.default_rng(0).permutation(len(sc.jobs))
    other = dataclasses.replace(sc, jobs=tuple(sc.jobs[i] for i in order))
    assert offline_optimum(other).welfare == pytest.approx(offline_optimum(sc).welfare, rel=1e-4)


def test_offline_dominates_online():
    for fam in ("linear", "log", "poly"):
        for seed in range(3):
            sc = generate_scenario(GenParams(nodes=4, slots=8, job_count=10, capacity_mu=5.0,
                                             utility_family=fam, seed=seed))
            off = offline_optimum(sc)
            for policy in ("onsocmax", "max_first", "equal_share"):
                on = run_policy(sc, policy).welfare_total
                assert on <= off.upper_bound + 1e-6 * max(1.0, off.upper_bound)


def test_single_job_ample_capacity_ratio_one():
    sc = generate_scenario(GenParams(nodes=3, slots=6, job_count=1, utility_family="linear", seed=2))
    row = scenario_ratio(sc)
    assert row.ratio == pytest.approx(1.0, abs=1e-2)
    assert row.bound_ok


def test_competitive_ratio_report():
    scs = [generate_scenario(GenParams(nodes=3, slots=6, job_count=5, coeff_range=(2.0, 2.0),
                                       capacity_mu=4.0, seed=s)) for s in range(4)]
    rep = competitive_ratio(scs)
    assert len(rep.rows) == 4
    assert [r.seed for r in rep.rows] == [0, 1, 2, 3]
    assert rep.max_ratio <= 2.05
    assert rep.worst.ratio == rep.max_ratio and rep.all_ok
    assert all(r.ratio >= 1 - 1e-6 for r in rep.rows)


def test_competitive_ratio_empty():
    with pytest.raises(ValueError):
        competitive_ratio([])


def test_zero_online_welfare_flagged(monkeypatch):
    mesh = build_mesh(1, 1, 60, [10])
    job = make_job(mesh, coeff=1.0, workload=3.0, cap=3.0)
    sc = make_scenario(mesh, [job])
    assert not scenario_ratio(sc, policy="max_first").flagged
    # stand-in online run that serves nothing
    monkeypatch.setattr(oracle, "run_policy", lambda *a, **k: SimpleNamespace(welfare_total=0.0))
    row = scenario_ratio(sc)
    assert math.isinf(row.ratio) and row.flagged and not row.bound_ok
