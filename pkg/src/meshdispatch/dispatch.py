"""Online dispatch loop and baseline policies.

Jobs are revealed one at a time in arrival order. Each policy decides the
arriving job's allocation from the current utilizations only, then the
utilizations are advanced. Decisions are never revised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .mesh import Job, ResourceMesh, Scenario, Unit, available_units
from .pricing import build_curves, marginal_cost
from .solver import (Allocation, PseudoWelfareProblem, SolverConfig,
                     solve_pseudo_welfare)
from .utility import WelfareBounds, cluster_utility, job_utility, welfare_bounds

POLICIES = ("onsocmax", "onsocmax_integral", "max_first", "equal_share")


@dataclass
class OnlineState:
    mesh: ResourceMesh
    bounds: WelfareBounds
    curves: dict
    omega: dict
    job_cursor: int = 0

    @classmethod
    def fresh(cls, mesh: ResourceMesh, bounds: WelfareBounds) -> OnlineState:
        curves = build_curves(dict(mesh.capacity), bounds.iota, bounds.upsilon)
        return cls(mesh, bounds, curves, {u: 0.0 for u in mesh.capacity})

    def residual(self, unit: Unit) -> float:
        return max(0.0, self.mesh.capacity[unit] - self.omega[unit])

    def commit(self, alloc: Allocation) -> None:
        for u, v in alloc.x.items():
            if v > 0:
                # clamp float round-off at full capacity
                self.omega[u] = min(self.omega[u] + v, self.mesh.capacity[u])
        self.job_cursor += 1


@dataclass
class DispatchTrace:
    policy: str
    per_job: list = field(default_factory=list)     # (job id, Allocation, accepted)
    final_omega: dict = field(default_factory=dict)
    welfare_jobs: float = 0.0
    welfare_cluster: float = 0.0
    bounds: WelfareBounds | None = None

    @property
    def welfare_total(self) -> float:
        return self.welfare_jobs + self.welfare_cluster

    @property
    def rejected_count(self) -> int:
        return sum(1 for _, _, ok in self.per_job if not ok)

    @property
    def unconverged_count(self) -> int:
        return sum(1 for _, a, _ in self.per_job if not a.converged)


def _problem(state: OnlineState, job: Job) -> PseudoWelfareProblem:
    units = available_units(job, state.mesh)
    return PseudoWelfareProblem(job, units, state.curves, state.omega)


def onsocmax_arrival(state: OnlineState, job: Job, config: SolverConfig | None = None) -> Allocation:
    """Solve the arriving job's pseudo-welfare problem and reserve the result."""
    problem = _problem(state, job)
    if problem.size == 0:
        alloc = Allocation.rejected()
    else:
        alloc = solve_pseudo_welfare(problem, config)
    state.commit(alloc)
    return alloc


def integral_scores(state: OnlineState, job: Job) -> dict:
    """Score of placing the whole workload on each unit that can hold it."""
    rho = job.workload
    scores = {}
    for u in available_units(job, state.mesh):
        if state.residual(u) < rho:
            continue
        b = job.betas[u] / state.mesh.capacity[u]
        price = marginal_cost(state.curves[u], state.omega[u] + rho)
        scores[u] = float(job.utility.value(rho)) + b * rho - price * rho
    return scores


def integral_mode_arrival(state: OnlineState, job: Job) -> Allocation:
    """Non-partitionable jobs: the whole workload goes to at most one unit."""
    units = available_units(job, state.mesh)
    scores = integral_scores(state, job)
    best, best_score = None, 0.0
    for u in units:  # canonical order, so ties keep the earliest unit
        if u in scores and scores[u] > best_score:
            best, best_score = u, scores[u]
    if best is None:
        alloc = Allocation.rejected(units)
    else:
        x = {u: 0.0 for u in units}
        x[best] = job.workload
        alloc = _baseline_allocation(state, job, x)
    state.commit(alloc)
    return alloc


def _baseline_allocation(state: OnlineState, job: Job, x: Mapping[Unit, float]) -> Allocation:
    f = job_utility(job, x)
    g = cluster_utility(job, state.mesh, x)
    return Allocation(dict(x), welfare=f + g, accepted=any(v > 0 for v in x.values()),
                      info={"f": f, "g": g})


def _water_fill(job: Job, units: list, b: np.ndarray, room: np.ndarray, budget: float) -> np.ndarray:
    """Pour ``budget`` into the units with the highest marginal ``f'(x) + b``."""
    spec = job.utility
    if room.sum() <= budget:
        return room.copy()
    x = np.zeros(len(units))
    if spec.family == "linear":
        left = budget
        # stable sort keeps canonical order among equal marginals
        for i in sorted(range(len(units)), key=lambda i: -b[i]):
            take = min(room[i], left)
            x[i] = take
            left -= take
            if left <= 0:
                break
        return x

    def fill(level: float) -> np.ndarray:
        return np.array([min(spec.deriv_inverse(level - bi), ri) for bi, ri in zip(b, room)])

    # bracket the water level: at hi no unit takes more than an even share,
    # at lo every unit is filled to its room
    hi = float(np.max(spec.deriv(budget / len(units)) + b))
    lo = float(np.min(b))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if fill(mid).sum() > budget:
            lo = mid
        else:
            hi = mid
    x = fill(hi)
    # hand the residual (round-off sized) to the unit with the most headroom
    gap = budget - x.sum()
    if gap > 0:
        i = int(np.argmax(room - x))
        x[i] = min(room[i], x[i] + gap)
    return x


def max_first_arrival(state: OnlineState, job: Job) -> Allocation:
    """Myopic greedy: maximize the job's own welfare, ignoring prices."""
    units = available_units(job, state.mesh)
    if not units:
        alloc = Allocation.rejected()
        state.commit(alloc)
        return alloc
    room = np.array([min(job.caps[u], state.residual(u)) for u in units])
    b = np.array([job.betas[u] / state.mesh.capacity[u] for u in units])
    x = _water_fill(job, units, b, room, job.workload)
    alloc = _baseline_allocation(state, job, dict(zip(units, x.tolist())))
    state.commit(alloc)
    return alloc


def equal_share_split(workload: float, room: list[float]) -> list[float]:
    """Equal shares clamped to ``room``, with leftovers redistributed."""
    x = [0.0] * len(room)
    open_ = [i for i, r in enumerate(room) if r > 0]
    left = workload
    for _ in range(len(room) + 1):
        if not open_ or left <= 1e-15 * max(1.0, workload):
            break
        share = left / len(open_)
        still = []
        for i in open_:
            take = min(share, room[i] - x[i])
            x[i] += take
            left -= take
            if room[i] - x[i] > 1e-15 * max(1.0, room[i]):
                still.append(i)
        open_ = still
    return x


def equal_share_arrival(state: OnlineState, job: Job) -> Allocation:
    units = available_units(job, state.mesh)
    if not units:
        alloc = Allocation.rejected()
        state.commit(alloc)
        return alloc
    room = [min(job.caps[u], state.residual(u)) for u in units]
    x = equal_share_split(job.workload, room)
    alloc = _baseline_allocation(state, job, dict(zip(units, x)))
    state.commit(alloc)
    return alloc


def _arrival_fn(policy: str, config: SolverConfig | None) -> Callable[[OnlineState, Job], Allocation]:
    if policy == "onsocmax":
        return lambda s, j: onsocmax_arrival(s, j, config)
    if policy == "onsocmax_integral":
        return integral_mode_arrival
    if policy == "max_first":
        return max_first_arrival
    if policy == "equal_share":
        return equal_share_arrival
    raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")


def run_policy(scenario: Scenario, policy: str = "onsocmax", config: SolverConfig | None = None,
               bounds: WelfareBounds | None = None) -> DispatchTrace:
    """Replay ``scenario`` under ``policy``; welfare is recomputed from allocations."""
    arrive = _arrival_fn(policy, config)
    if bounds is None:
        bounds = welfare_bounds(scenario) if scenario.jobs else WelfareBounds(1.0, 1.0)
    state = OnlineState.fresh(scenario.mesh, bounds)
    trace = DispatchTrace(policy, bounds=bounds)
    for job in scenario.jobs:
        alloc = arrive(state, job)
        trace.per_job.append((job.id, alloc, alloc.accepted))
        trace.welfare_jobs += job_utility(job, alloc.x)
        trace.welfare_cluster += cluster_utility(job, scenario.mesh, alloc.x)
    trace.final_omega = dict(state.omega)
    return trace


def trace_welfare(scenario: Scenario, trace: DispatchTrace) -> tuple[float, float]:
    """(job welfare, cluster welfare) recomputed from the trace's allocations."""
    jobs = {j.id: j for j in scenario.jobs}
    f = sum(job_utility(jobs[i], a.x) for i, a, _ in trace.per_job)
    g = sum(cluster_utility(jobs[i], scenario.mesh, a.x) for i, a, _ in trace.per_job)
    return f, g
