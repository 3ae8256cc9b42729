"""Augmented-Lagrangian solver for one job's pseudo-welfare problem.

For an arriving job the dispatcher maximizes

    f(x) + sum_r g_r(x_r) - sum_r integral_{w_r}^{w_r + x_r} phi_r(u) du

subject to ``sum_r x_r <= workload`` and ``0 <= x_r <= cap_r``. The solver
minimizes the negated objective with slack variables eliminated in closed
form, running projected gradient descent in the inner loop and first-order
multiplier updates in the outer loop.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .mesh import Job, Unit
from .pricing import PricingCurve

log = logging.getLogger(__name__)

FEAS_TOL = 1e-6


@dataclass(frozen=True)
class SolverConfig:
    sigma0: float = 0.97
    growth: float = 1.002
    theta1: float = 0.99
    theta2: float = 0.999
    eta_final: float = 1e-6
    eps_final: float = 1e-6
    learning_rate: float = 2.0
    decay: float = 0.95
    max_outer: int = 500
    max_inner: int = 200

    def __post_init__(self):
        if not 0 < self.theta1 <= self.theta2 <= 1:
            raise ValueError("need 0 < theta1 <= theta2 <= 1")
        if not self.growth > 1:
            raise ValueError("growth must exceed 1")
        for name in ("sigma0", "eta_final", "eps_final", "learning_rate", "decay"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration limits must be positive")

    def with_overrides(self, **kw) -> SolverConfig:
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


class PseudoWelfareProblem:
    """One arrival's problem, with per-unit data held as numpy arrays."""

    def __init__(self, job: Job, units: Sequence[Unit], curves: Mapping[Unit, PricingCurve],
                 omega: Mapping[Unit, float]):
        self.job = job
        self.units = list(units)
        self.spec = job.utility
        self.workload = float(job.workload)
        self.curves = [curves[u] for u in self.units]
        self.capacity = np.array([c.capacity for c in self.curves], dtype=float)
        self.omega = np.array([omega[u] for u in self.units], dtype=float)
        self.cap = np.array([job.caps[u] for u in self.units], dtype=float)
        self.caps_effective = np.maximum(0.0, np.minimum(self.cap, self.capacity - self.omega))
        self.b = np.array([job.betas[u] for u in self.units], dtype=float) / self.capacity
        # curve parameters (all curves share iota, upsilon and alpha)
        c0 = self.curves[0] if self.curves else None
        self.iota = c0.iota if c0 else 0.0
        self.degenerate = c0.degenerate if c0 else True
        if not self.degenerate:
            self.alpha = c0.alpha_hat
            self.threshold = np.array([c.threshold for c in self.curves])
            self.rate = np.array([c._rate for c in self.curves])
            self.scale = np.array([c._scale for c in self.curves])

    @property
    def size(self) -> int:
        return len(self.units)

    def phi(self, w: np.ndarray) -> np.ndarray:
        if self.degenerate:
            return np.full_like(w, self.iota)
        exp_branch = self.scale * np.exp(self.rate * w) + self.iota / self.alpha
        return np.where(w < self.threshold, self.iota, exp_branch)

    def phi_inverse(self, price: np.ndarray) -> np.ndarray:
        """Largest utilization whose marginal cost is at most ``price``.

        ``-inf`` below ``iota``; at exactly ``iota`` the flat branch ends at
        the threshold; unbounded prices map to ``inf``.
        """
        price = np.asarray(price, dtype=float)
        if self.degenerate:
            return np.where(price < self.iota, -np.inf, np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.log((price - self.iota / self.alpha) / self.scale) / self.rate
        w = np.maximum(w, self.threshold)
        return np.where(price < self.iota, -np.inf, w)

    def cost(self, x: np.ndarray) -> np.ndarray:
        """Per-unit integral of the marginal cost over ``[omega, omega + x]``."""
        if self.degenerate:
            return self.iota * x
        lo, hi = self.omega, self.omega + x
        thr = self.threshold
        flat = np.maximum(0.0, np.minimum(hi, thr) - lo)
        start = np.maximum(lo, thr)
        span = np.maximum(0.0, hi - start)
        exp_part = (self.scale / self.rate) * np.exp(self.rate * start) * np.expm1(self.rate * span)
        return self.iota * flat + exp_part + (self.iota / self.alpha) * span

    def welfare_terms(self, x: np.ndarray) -> tuple[float, float]:
        """(job utility, cluster utility) at ``x``."""
        return float(np.sum(self.spec.value(x))), float(np.dot(self.b, x))

    def pseudo_welfare(self, x: np.ndarray) -> float:
        f, g = self.welfare_terms(x)
        return f + g - float(np.sum(self.cost(x)))

    def objective_grad(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the negated pseudo welfare."""
        return self.phi(self.omega + x) - self.spec.deriv(x) - self.b


@dataclass
class SolverState:
    x: np.ndarray
    mu: float
    y: np.ndarray
    z: np.ndarray
    sigma: float
    eta: float
    eps: float
    outer_iter: int = 0

    @classmethod
    def initial(cls, size: int, config: SolverConfig) -> SolverState:
        s0 = config.sigma0
        return cls(np.zeros(size), 0.0, np.zeros(size), np.zeros(size),
                   s0, 1.0 / s0, 1.0 / s0 ** config.theta1)


@dataclass
class Allocation:
    x: dict
    mu: float = 0.0
    welfare: float = 0.0
    cost_paid: float = 0.0
    converged: bool = True
    outer_iters: int = 0
    accepted: bool = True
    info: dict = field(default_factory=dict)

    @classmethod
    def rejected(cls, units: Sequence[Unit] = ()) -> Allocation:
        return cls({u: 0.0 for u in units}, accepted=False)

    @property
    def total(self) -> float:
        return float(sum(self.x.values()))


def optimal_slacks(state: SolverState, problem: PseudoWelfareProblem):
    """Closed-form slack values (s, l, q) that minimize the augmented Lagrangian."""
    sig = state.sigma
    x = state.x
    s = max(-state.mu / sig + problem.workload - float(x.sum()), 0.0)
    l = np.maximum(-state.y / sig + problem.caps_effective - x, 0.0)
    q = np.maximum(-state.z / sig + x, 0.0)
    return s, l, q


def lagrangian_value_grad(state: SolverState, problem: PseudoWelfareProblem):
    """Slack-eliminated augmented Lagrangian and its gradient in ``x``."""
    x, sig = state.x, state.sigma
    mu, y, z = state.mu, state.y, state.z
    f, g = problem.welfare_terms(x)
    value = float(np.sum(problem.cost(x))) - f - g
    budget = max(mu / sig + float(x.sum()) - problem.workload, 0.0)
    upper = np.maximum(y / sig + x - problem.caps_effective, 0.0)
    lower = np.maximum(z / sig - x, 0.0)
    value += 0.5 * sig * (budget ** 2 - (mu / sig) ** 2)
    value += 0.5 * sig * float(np.sum(upper ** 2 - (y / sig) ** 2))
    value += 0.5 * sig * float(np.sum(lower ** 2 - (z / sig) ** 2))
    grad = problem.objective_grad(x) + sig * budget + sig * upper - sig * lower
    return value, grad


def violation_degree(state: SolverState, problem: PseudoWelfareProblem) -> float:
    x, sig = state.x, state.sigma
    v = max(float(x.sum()) - problem.workload, -state.mu / sig)
    v += float(np.sum(np.maximum(x - problem.caps_effective, -state.y / sig)))
    v += float(np.sum(np.maximum(-x, -state.z / sig)))
    return v


def project_feasible(x: np.ndarray, upper: np.ndarray, budget: float) -> np.ndarray:
    """Euclidean projection onto ``{0 <= x <= upper, sum(x) <= budget}``."""
    clipped = np.clip(x, 0.0, upper)
    if clipped.sum() <= budget:
        return clipped
    # the shift applies to the unclipped point
    lo, hi = 0.0, float(x.max())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.clip(x - mid, 0.0, upper).sum() > budget:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return np.clip(x - hi, 0.0, upper)


def _inner_descent(state: SolverState, problem: PseudoWelfareProblem, config: SolverConfig,
                   tol: float) -> float:
    """Projected gradient descent on the box ``[0, cap]``.

    Trial steps follow the Barzilai-Borwein rule, starting from
    ``learning_rate``, and halve until the augmented Lagrangian decreases
    sufficiently. ``decay`` is kept in the config but not used here.
    Returns the norm of the projected gradient at the final iterate.
    """
    upper = problem.caps_effective
    x = state.x
    value, grad = lagrangian_value_grad(state, problem)
    step = config.learning_rate
    for _ in range(config.max_inner):
        pg = x - np.clip(x - grad, 0.0, upper)
        pg_norm = math.sqrt(float(np.dot(pg, pg)))
        if pg_norm <= tol:
            return pg_norm
        t = step
        for _ in range(200):
            trial = np.clip(x - t * grad, 0.0, upper)
            d = trial - x
            state.x = trial
            trial_value, trial_grad = lagrangian_value_grad(state, problem)
            if trial_value <= value + 1e-4 * float(np.dot(grad, d)):
                break
            t *= 0.5
        s_vec, y_vec = trial - x, trial_grad - grad
        sy = float(np.dot(s_vec, y_vec))
        ss = float(np.dot(s_vec, s_vec))
        # no curvature seen along the last move: the box will stop a long step
        step = ss / sy if sy > 1e-12 * ss else 4.0 * max(t, config.learning_rate)
        step = min(max(step, 1e-10), 1e8)
        x, value, grad = trial, trial_value, trial_grad
    state.x = x
    pg = x - np.clip(x - grad, 0.0, upper)
    return math.sqrt(float(np.dot(pg, pg)))


def _inner_exact_linear(state: SolverState, problem: PseudoWelfareProblem) -> float:
    """Exact inner minimizer for constant-slope utilities.

    Inside the box the augmented Lagrangian is separable apart from the
    budget penalty, whose slope ``lam`` is a scalar. For a fixed ``lam``
    each coordinate sits where ``phi`` meets ``a + b - lam``; ``lam`` itself
    is found by bisection. Units whose price line is flat at that level
    share the remaining budget in proportion to their room.
    """
    sig, upper, omega = state.sigma, problem.caps_effective, problem.omega
    slope = problem.spec.coeff + problem.b
    target = problem.workload - state.mu / sig

    def fill(lam):
        w = problem.phi_inverse(slope - lam)
        return np.clip(w - omega, 0.0, upper)

    def excess(lam):
        return lam - sig * max(float(fill(lam).sum()) - target, 0.0)

    lo, hi = 0.0, sig * max(float(upper.sum()) - target, 0.0)
    if excess(lo) < 0:
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if excess(mid) < 0:
                lo = mid
            else:
                hi = mid
        lam = hi
    else:
        lam = 0.0
    x = fill(lam)
    # flat price lines are set-valued; place them to balance the budget term
    tied = np.isclose(slope - lam, problem.iota, rtol=1e-9, atol=1e-12) & (upper > 0)
    if tied.any():
        base = np.where(tied, 0.0, x)
        room = np.where(tied, np.clip(np.maximum(problem.threshold - omega, 0.0)
                                      if not problem.degenerate else upper, 0.0, upper), 0.0)
        want = target + lam / sig if lam > 0 else target
        frac = 0.0 if room.sum() <= 0 else min(max((want - base.sum()) / room.sum(), 0.0), 1.0)
        x = base + frac * room
    state.x = x
    _, grad = lagrangian_value_grad(state, problem)
    pg = x - np.clip(x - grad, 0.0, upper)
    return math.sqrt(float(np.dot(pg, pg)))


def _update_duals(state: SolverState, problem: PseudoWelfareProblem) -> None:
    sig, x = state.sigma, state.x
    state.mu = max(state.mu + sig * (float(x.sum()) - problem.workload), 0.0)
    state.y = np.maximum(state.y + sig * (x - problem.caps_effective), 0.0)
    state.z = np.maximum(state.z - sig * x, 0.0)


def solve_pseudo_welfare(problem: PseudoWelfareProblem, config: SolverConfig | None = None) -> Allocation:
    """Run the augmented Lagrangian method and return a feasible allocation.

    The reported ``mu`` is the multiplier estimate at the returned iterate.
    """
    config = config or SolverConfig()
    n = problem.size
    if n == 0:
        return Allocation.rejected()
    state = SolverState.initial(n, config)
    converged = False
    best_x, best_val = np.zeros(n), 0.0
    for kappa in range(config.max_outer):
        state.outer_iter = kappa
        if problem.spec.family == "linear":
            pg_norm = _inner_exact_linear(state, problem)
        else:
            pg_norm = _inner_descent(state, problem, config, min(state.eta, config.eta_final))
        v = violation_degree(state, problem)
        x = state.x
        if float(x.sum()) <= problem.workload + FEAS_TOL:
            val = problem.pseudo_welfare(x)
            if val > best_val:
                best_x, best_val = x.copy(), val
        if v <= state.eps and pg_norm <= config.eta_final and abs(v) <= config.eps_final:
            converged = True
            break
        # multipliers move on every outer iteration; with theta close to 1
        # the violation test alone would almost never admit an update
        _update_duals(state, problem)
        if v <= state.eps:
            state.eta = state.eta / state.sigma
            state.eps = state.eps / state.sigma ** config.theta2
        else:
            state.sigma *= config.growth
            state.eta = 1.0 / state.sigma
            state.eps = 1.0 / state.sigma ** config.theta1
    x = state.x
    mu = max(state.mu + state.sigma * (float(x.sum()) - problem.workload), 0.0)
    if not converged:
        log.debug("job %s: no convergence after %d outer iterations", problem.job.id, config.max_outer)
        cand = project_feasible(x, problem.caps_effective, problem.workload)
        if problem.pseudo_welfare(cand) < best_val:
            x = best_x
    x = project_feasible(x, problem.caps_effective, problem.workload)
    return finish_allocation(problem, x, mu, converged, state.outer_iter + 1)


def finish_allocation(problem: PseudoWelfareProblem, x: np.ndarray, mu: float = 0.0,
                      converged: bool = True, outer_iters: int = 0) -> Allocation:
    f, g = problem.welfare_terms(x)
    cost = float(np.sum(problem.cost(x)))
    return Allocation(
        x={u: float(v) for u, v in zip(problem.units, x)},
        mu=mu,
        welfare=f + g,
        cost_paid=cost,
        converged=converged,
        outer_iters=outer_iters,
        accepted=bool(np.any(x > 0)),
        info={"f": f, "g": g},
    )


def kkt_residuals(problem: PseudoWelfareProblem, x: np.ndarray, mu: float, tol: float = FEAS_TOL) -> np.ndarray:
    """Stationarity residual ``f' + beta/C - phi(omega + x) - mu`` per unit.

    Coordinates at a box bound have the residual replaced by its part with
    the wrong sign (zero when correctly signed).
    """
    r = problem.spec.deriv(x) + problem.b - problem.phi(problem.omega + x) - mu
    at_upper = x >= problem.caps_effective - tol
    at_lower = x <= tol
    r = np.where(at_upper & ~at_lower, np.minimum(r, 0.0), r)
    r = np.where(at_lower & ~at_upper, np.maximum(r, 0.0), r)
    r = np.where(at_lower & at_upper, 0.0, r)
    return r
