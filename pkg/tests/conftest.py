import sys

import numpy as np
import pytest

from meshdispatch.mesh import Job, Scenario, available_units, build_mesh, sort_jobs
from meshdispatch.utility import UtilitySpec


def make_job(mesh, id=0, arrival=0.0, deadline=None, workload=5.0, family="linear", coeff=1.0,
             cap=5.0, beta=0.2, nodes=None):
    """Job over every available unit; ``cap``/``beta`` may be scalars or per-unit dicts."""
    deadline = mesh.horizon if deadline is None else deadline
    nodes = frozenset(range(mesh.node_count)) if nodes is None else frozenset(nodes)
    probe = Job(id, arrival, deadline, workload, nodes, {}, UtilitySpec(family, coeff), {})
    units = available_units(probe, mesh)
    caps = {u: (cap[u] if isinstance(cap, dict) else min(cap, mesh.capacity[u])) for u in units}
    betas = {u: (beta[u] if isinstance(beta, dict) else beta) for u in units}
    return Job(id, float(arrival), float(deadline), float(workload), nodes, caps,
               UtilitySpec(family, float(coeff)), betas)


def make_scenario(mesh, jobs, seed=0):
    return Scenario(mesh, sort_jobs(jobs), seed)


def random_small_scenario(rng, family=None, max_dim=6, n_jobs=None):
    """Tiny random scenario with at most ``max_dim`` (job, unit) variables."""
    while True:
        nodes = int(rng.integers(1, 3))
        slots = int(rng.integers(1, 3))
        mesh = build_mesh(nodes, slots, 60.0, rng.uniform(2.0, 8.0, size=nodes * slots).tolist())
        jobs = []
        for n in range(n_jobs or int(rng.integers(1, 4))):
            fam = family or str(rng.choice(["linear", "log", "poly"]))
            a = float(rng.uniform(0, mesh.horizon / 2)) if slots > 1 else 0.0
            jobs.append(make_job(mesh, id=n, arrival=a, workload=float(rng.uniform(1, 8)), family=fam,
                                 coeff=float(rng.uniform(1, 3)), cap=float(rng.uniform(1, 6)),
                                 beta=float(rng.uniform(0.1, 0.5))))
        sc = make_scenario(mesh, jobs)
        dim = sum(len(j.caps) for j in sc.jobs)
        if 1 <= dim <= max_dim:
            return sc


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance and acceptance.LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance.LINES):
            terminalreporter.write_line(acceptance.LINES[n])
