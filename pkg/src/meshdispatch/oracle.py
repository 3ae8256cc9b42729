"""Offline optimum, brute-force cross-check and empirical competitive ratio.

The offline program sees every job at once and maximizes total welfare
subject to per-job budgets, per-unit capacities and the per-unit caps. It
is solved with an augmented Lagrangian carrying one multiplier per budget
and one per unit capacity; the box is kept by the inner solver. Since the
objective is separable, the final multipliers also give an upper bound on
the optimum through the per-unit conjugates, so every solve reports its
own duality gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .dispatch import run_policy
from .mesh import Scenario, available_units
from .pricing import solve_alpha
from .solver import SolverConfig
from .utility import conjugate_value, welfare_bounds

OFFLINE_MAX_OUTER = 2000
BRUTE_FORCE_MAX_DIM = 6
BRUTE_FORCE_MAX_POINTS = 50_000_000
_CHUNK = 1 << 18
_SQRT_FLOOR = 1e-12


@dataclass
class OfflineSolution:
    welfare: float
    x: dict                     # (job id, unit) -> amount
    upper_bound: float          # Lagrangian dual bound at the final multipliers
    converged: bool
    outer_iters: int
    max_violation: float        # before the final feasibility repair

    @property
    def gap(self) -> float:
        return self.upper_bound - self.welfare


class _JointProgram:
    """Flattened variables: one per (job, available unit) pair."""

    def __init__(self, scenario: Scenario):
        mesh = scenario.mesh
        self.scenario = scenario
        self.keys, job_idx, unit_idx = [], [], []
        units = mesh.units
        self.unit_pos = {u: i for i, u in enumerate(units)}
        self.jobs = list(scenario.jobs)
        for j, job in enumerate(self.jobs):
            for u in available_units(job, mesh):
                self.keys.append((job.id, u))
                job_idx.append(j)
                unit_idx.append(self.unit_pos[u])
        self.job_idx = np.array(job_idx, dtype=int)
        self.unit_idx = np.array(unit_idx, dtype=int)
        self.workload = np.array([job.workload for job in self.jobs], dtype=float)
        self.capacity = np.array([mesh.capacity[u] for u in units], dtype=float)
        cap, b, coeff, fam = [], [], [], []
        for j, (n, u) in zip(job_idx, self.keys):
            job = self.jobs[j]
            cap.append(job.caps[u])
            b.append(job.betas[u] / mesh.capacity[u])
            coeff.append(job.utility.coeff)
            fam.append(job.utility.family)
        self.cap = np.array(cap, dtype=float)
        self.b = np.array(b, dtype=float)
        self.coeff = np.array(coeff, dtype=float)
        fam = np.array(fam)
        self.is_lin, self.is_log, self.is_poly = fam == "linear", fam == "log", fam == "poly"

    @property
    def size(self) -> int:
        return len(self.keys)

    def welfare(self, x: np.ndarray) -> float:
        f = np.where(self.is_lin, x, np.where(self.is_log, np.log1p(x), np.sqrt(np.maximum(x, 0.0))))
        return float(np.dot(self.coeff, f) + np.dot(self.b, x))

    def welfare_grad(self, x: np.ndarray) -> np.ndarray:
        d = np.where(self.is_lin, 1.0, np.where(self.is_log, 1.0 / (1.0 + x),
                     0.5 / np.sqrt(np.maximum(x, _SQRT_FLOOR))))
        return self.coeff * d + self.b

    def job_sums(self, x: np.ndarray) -> np.ndarray:
        return np.bincount(self.job_idx, weights=x, minlength=len(self.jobs))

    def unit_sums(self, x: np.ndarray) -> np.ndarray:
        return np.bincount(self.unit_idx, weights=x, minlength=len(self.capacity))

    def violation(self, x: np.ndarray) -> float:
        v1 = np.max(self.job_sums(x) - self.workload, initial=0.0)
        v2 = np.max(self.unit_sums(x) - self.capacity, initial=0.0)
        return float(max(v1, v2, 0.0))

    def repair(self, x: np.ndarray) -> np.ndarray:
        """Scale down overfull units, then overfull jobs; both only shrink x."""
        x = np.clip(x, 0.0, self.cap)
        load = self.unit_sums(x)
        shrink = np.where(load > self.capacity, self.capacity / np.maximum(load, 1e-300), 1.0)
        x = x * shrink[self.unit_idx]
        used = self.job_sums(x)
        shrink = np.where(used > self.workload, self.workload / np.maximum(used, 1e-300), 1.0)
        return np.minimum(x * shrink[self.job_idx], self.cap)

    def dual_bound(self, mu: np.ndarray, lam: np.ndarray) -> float:
        """``sum xi_nr(mu_n + lam_r) + mu . workload + lam . capacity`` (weak duality)."""
        mesh = self.scenario.mesh
        total = float(np.dot(mu, self.workload) + np.dot(lam, self.capacity))
        for (n, u), j, r in zip(self.keys, self.job_idx, self.unit_idx):
            value, _ = conjugate_value(self.jobs[j], u, float(mu[j] + lam[r]), mesh.capacity[u])
            total += value
        return total


def offline_optimum(scenario: Scenario, config: SolverConfig | None = None,
                    tol: float = 1e-7) -> OfflineSolution:
    """Maximize total welfare over all jobs with full knowledge.

    Multipliers are updated after every inner solve; the penalty doubles
    whenever the multiplier change fails to halve. ``config`` supplies the
    initial penalty and the iteration limit (at least 2000 outer steps).
    """
    config = (config or SolverConfig()).with_overrides(max_outer=max(
        (config or SolverConfig()).max_outer, OFFLINE_MAX_OUTER))
    prog = _JointProgram(scenario)
    if prog.size == 0:
        return OfflineSolution(0.0, {}, 0.0, True, 0, 0.0)
    mu = np.zeros(len(prog.jobs))
    lam = np.zeros(len(prog.capacity))
    sigma = config.sigma0
    x = np.zeros(prog.size)
    bounds = list(zip(np.zeros(prog.size), prog.cap))
    last_v = math.inf
    converged = False
    kappa = 0

    for kappa in range(config.max_outer):
        def fun(z):
            pb = np.maximum(mu / sigma + prog.job_sums(z) - prog.workload, 0.0)
            pc = np.maximum(lam / sigma + prog.unit_sums(z) - prog.capacity, 0.0)
            value = -prog.welfare(z) + 0.5 * sigma * (float(pb @ pb) + float(pc @ pc))
            grad = -prog.welfare_grad(z) + sigma * (pb[prog.job_idx] + pc[prog.unit_idx])
            return value, grad

        res = minimize(fun, x, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-10})
        x = res.x
        step_mu = prog.job_sums(x) - prog.workload
        step_lam = prog.unit_sums(x) - prog.capacity
        new_mu = np.maximum(mu + sigma * step_mu, 0.0)
        new_lam = np.maximum(lam + sigma * step_lam, 0.0)
        # complementarity-aware violation: max over |new - old| / sigma
        v = max(float(np.max(np.abs(new_mu - mu), initial=0.0)),
                float(np.max(np.abs(new_lam - lam), initial=0.0))) / sigma
        mu, lam = new_mu, new_lam
        if v <= tol:
            converged = True
            break
        if v > 0.5 * last_v:
            sigma *= 2.0
        last_v = v

    raw_violation = prog.violation(x)
    x = prog.repair(x)
    welfare = prog.welfare(x)
    upper = max(prog.dual_bound(mu, lam), welfare)
    return OfflineSolution(
        welfare=welfare,
        x={k: float(v) for k, v in zip(prog.keys, x)},
        upper_bound=upper,
        converged=converged,
        outer_iters=kappa + 1,
        max_violation=raw_violation,
    )


def brute_force_optimum(scenario: Scenario, grid_step: float) -> float:
    """Exhaustive search over the grid ``{0, step, 2 step, ...}`` per coordinate.

    Grid points violating a budget, a capacity or a cap are skipped.
    """
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    prog = _JointProgram(scenario)
    if prog.size > BRUTE_FORCE_MAX_DIM:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX_DIM} variables, got {prog.size}")
    if prog.size == 0:
        return 0.0
    axes = [np.arange(0.0, c + 1e-12 * max(1.0, c), grid_step) for c in prog.cap]
    shape = tuple(len(a) for a in axes)
    total = math.prod(shape)
    if total > BRUTE_FORCE_MAX_POINTS:
        raise ValueError(f"grid has {total} points; raise grid_step (limit {BRUTE_FORCE_MAX_POINTS})")
    job_cols = [prog.job_idx == j for j in range(len(prog.jobs))]
    unit_cols = [(prog.unit_idx == r, c) for r, c in enumerate(prog.capacity) if (prog.unit_idx == r).any()]
    best = 0.0
    for start in range(0, total, _CHUNK):
        idx = np.unravel_index(np.arange(start, min(start + _CHUNK, total)), shape)
        pts = np.stack([a[i] for a, i in zip(axes, idx)], axis=1)
        ok = np.ones(len(pts), dtype=bool)
        for cols, w in zip(job_cols, prog.workload):
            ok &= pts[:, cols].sum(axis=1) <= w + 1e-12
        for cols, c in unit_cols:
            ok &= pts[:, cols].sum(axis=1) <= c + 1e-12
        pts = pts[ok]
        if len(pts):
            f = np.where(prog.is_lin, pts, np.where(prog.is_log, np.log1p(pts), np.sqrt(pts)))
            best = max(best, float((f @ prog.coeff + pts @ prog.b).max()))
    return best


@dataclass
class RatioRow:
    seed: int
    theta_star: float
    theta_on: float
    ratio: float
    alpha_hat: float
    bound_ok: bool
    theta_upper: float = math.nan
    flagged: bool = False


@dataclass
class RatioReport:
    rows: list = field(default_factory=list)

    @property
    def max_ratio(self) -> float:
        return max(r.ratio for r in self.rows)

    @property
    def all_ok(self) -> bool:
        return all(r.bound_ok for r in self.rows)

    @property
    def theta_star(self) -> float:
        return self.worst.theta_star

    @property
    def theta_on(self) -> float:
        return self.worst.theta_on

    @property
    def ratio(self) -> float:
        return self.worst.ratio

    @property
    def alpha_hat(self) -> float:
        return self.worst.alpha_hat

    @property
    def worst(self) -> RatioRow:
        return max(self.rows, key=lambda r: r.ratio)


def scenario_ratio(scenario: Scenario, config: SolverConfig | None = None, policy: str = "onsocmax",
                   slack: float = 0.05) -> RatioRow:
    bounds = welfare_bounds(scenario)
    alpha = solve_alpha(bounds.ratio)
    offline = offline_optimum(scenario, config)
    online = run_policy(scenario, policy, config, bounds).welfare_total
    flagged = False
    if offline.welfare <= 0 and online <= 0:
        ratio = 1.0
    elif online <= 0:
        ratio, flagged = math.inf, True
    else:
        ratio = offline.welfare / online
    return RatioRow(scenario.seed, offline.welfare, online, ratio, alpha,
                    bool(ratio <= alpha + slack), offline.upper_bound, flagged)


def competitive_ratio(scenarios, config: SolverConfig | None = None, policy: str = "onsocmax",
                      slack: float = 0.05) -> RatioReport:
    """Offline-over-online welfare for each scenario, checked against ``alpha_hat``."""
    scenarios = list(scenarios)
    if not scenarios:
        raise ValueError("competitive_ratio needs at least one scenario")
    return RatioReport([scenario_ratio(s, config, policy, slack) for s in scenarios])
