"""Synthetic scenario generation.

Defaults reproduce the evaluation setup: 10 nodes over 24 one-hour slots,
20 jobs, Poisson arrivals (2.03 per slot), exponential service durations
(mean 4 slots), capacities ~ N(20, 2), workloads ~ N(18, 3), per-node job
capability ~ N(7, 1), coefficients ~ U[1, 3], cluster weights ~ U[0.1, 0.5].
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .mesh import Job, Scenario, available_units, build_mesh, sort_jobs
from .utility import FAMILIES, UtilitySpec

WORKLOAD_FLOOR = 0.5
CAP_FLOOR = 0.1
CAPACITY_FLOOR = 0.1


@dataclass(frozen=True)
class GenParams:
    nodes: int = 10
    slots: int = 24
    slot_minutes: float = 60.0
    job_count: int = 20
    arrival_rate: float = 2.03
    duration_mean_slots: float = 4.0
    capacity_mu: float = 20.0
    capacity_sigma: float = 2.0
    workload_mu: float = 18.0
    workload_sigma: float = 3.0
    cap_mu: float = 7.0
    cap_sigma: float = 1.0
    utility_family: str = "linear"
    coeff_range: tuple[float, float] = (1.0, 3.0)
    beta_range: tuple[float, float] = (0.1, 0.5)
    # probability that a node is eligible for a job; 1.0 means all nodes
    locality: float = 1.0
    # non-partitionable jobs: every per-unit cap equals the workload
    integral: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.utility_family not in FAMILIES:
            raise ValueError(f"unknown utility family {self.utility_family!r}")
        positive = ("nodes", "slots", "slot_minutes", "arrival_rate", "duration_mean_slots",
                    "capacity_mu", "workload_mu", "cap_mu")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.job_count < 0:
            raise ValueError("job_count must be non-negative")
        for name in ("capacity_sigma", "workload_sigma", "cap_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("coeff_range", "beta_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} must be an ordered positive range")
        if not 0 < self.locality <= 1:
            raise ValueError("locality must be in (0, 1]")

    def replace(self, **kw) -> GenParams:
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


def _arrival_minutes(p: GenParams, rng: np.random.Generator) -> list[float]:
    counts = rng.poisson(p.arrival_rate, size=p.slots)
    slots = [t for t in range(p.slots) for _ in range(counts[t])]
    if len(slots) > p.job_count:
        slots = slots[:p.job_count]
    while len(slots) < p.job_count:
        slots.append(int(rng.integers(p.slots)))
    offsets = rng.uniform(0.0, 1.0, size=len(slots))
    return sorted((t + u) * p.slot_minutes for t, u in zip(slots, offsets))


def generate_scenario(params: GenParams | None = None, **overrides) -> Scenario:
    """Draw a scenario; a pure function of ``params`` (seed included)."""
    p = (params or GenParams()).replace(**overrides) if overrides else (params or GenParams())
    rng = np.random.default_rng(p.seed)
    n_units = p.nodes * p.slots
    caps = np.maximum(rng.normal(p.capacity_mu, p.capacity_sigma, size=n_units), CAPACITY_FLOOR)
    mesh = build_mesh(p.nodes, p.slots, p.slot_minutes, caps.tolist())
    horizon = mesh.horizon

    jobs = []
    for n, a in enumerate(_arrival_minutes(p, rng)):
        duration = rng.exponential(p.duration_mean_slots * p.slot_minutes)
        d = min(a + duration, horizon)
        if d <= a:
            d = min(a + 1e-6 * p.slot_minutes, horizon) if a < horizon else a + 1e-6
        workload = max(rng.normal(p.workload_mu, p.workload_sigma), WORKLOAD_FLOOR)
        node_caps = np.maximum(rng.normal(p.cap_mu, p.cap_sigma, size=p.nodes), CAP_FLOOR)
        node_betas = rng.uniform(*p.beta_range, size=p.nodes)
        coeff = rng.uniform(*p.coeff_range)
        if p.locality < 1.0:
            mask = rng.uniform(size=p.nodes) < p.locality
            if not mask.any():
                mask[rng.integers(p.nodes)] = True
            eligible = frozenset(int(k) for k in np.flatnonzero(mask))
        else:
            eligible = frozenset(range(p.nodes))
        probe = Job(n, float(a), float(d), float(workload), eligible, {}, UtilitySpec(p.utility_family, coeff), {})
        units = available_units(probe, mesh)
        if p.integral and units:
            workload = min(workload, min(mesh.capacity[u] for u in units))
            job_caps = {u: float(workload) for u in units}
        else:
            job_caps = {u: float(min(node_caps[u[0]], mesh.capacity[u])) for u in units}
        jobs.append(Job(
            id=n,
            arrival=float(a),
            deadline=float(d),
            workload=float(workload),
            eligible_nodes=eligible,
            caps=job_caps,
            utility=UtilitySpec(p.utility_family, float(coeff)),
            betas={u: float(node_betas[u[0]]) for u in units},
        ))
    return Scenario(mesh, sort_jobs(jobs), p.seed, {"params": p.to_dict()})
