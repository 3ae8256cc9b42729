"""Job utility families, cluster utility, welfare bounds and the conjugate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping

import numpy as np

if TYPE_CHECKING:
    from .mesh import Job, ResourceMesh, Scenario, Unit

FAMILIES = ("linear", "log", "poly")

# sqrt has an unbounded slope at 0; welfare bounds evaluate it from here on
DERIV_CLAMP = 0.01
# floor used when the solver needs the sqrt slope at exactly 0
_SQRT_FLOOR = 1e-12


@dataclass(frozen=True)
class UtilitySpec:
    """Per-unit job utility ``a*x``, ``a*log(x+1)`` or ``a*sqrt(x)``."""

    family: str
    coeff: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown utility family {self.family!r}")

    def value(self, x):
        a = self.coeff
        if self.family == "linear":
            return a * x
        if self.family == "log":
            return a * np.log1p(x)
        return a * np.sqrt(x)

    def deriv(self, x):
        a = self.coeff
        if self.family == "linear":
            return a + 0.0 * x
        if self.family == "log":
            return a / (1.0 + x)
        return a / (2.0 * np.sqrt(np.maximum(x, _SQRT_FLOOR)))

    def deriv_inverse(self, level: float) -> float:
        """Largest ``x >= 0`` with ``deriv(x) >= level``; ``inf`` if unbounded.

        Undefined for the linear family (constant slope).
        """
        a = self.coeff
        if level <= 0:
            return math.inf
        if self.family == "log":
            return max(a / level - 1.0, 0.0)
        if self.family == "poly":
            return (a / (2.0 * level)) ** 2
        raise ValueError("linear utility has no derivative inverse")


@dataclass(frozen=True)
class WelfareBounds:
    iota: float
    upsilon: float

    def __post_init__(self):
        if not (0 < self.iota <= self.upsilon):
            raise ValueError(f"invalid welfare bounds iota={self.iota} upsilon={self.upsilon}")

    @property
    def ratio(self) -> float:
        return self.upsilon / self.iota


def _check_keys(job: Job, x: Mapping) -> None:
    stray = [u for u in x if u not in job.caps]
    if stray:
        raise KeyError(f"job {job.id}: allocation keyed by unavailable unit {stray[0]}")


def job_utility(job: Job, x: Mapping[Unit, float]) -> float:
    """Sum of the per-unit utilities of ``job`` at allocation ``x``."""
    _check_keys(job, x)
    return float(sum(job.utility.value(float(v)) for v in x.values()))


def cluster_utility(job: Job, mesh: ResourceMesh, x: Mapping[Unit, float]) -> float:
    """Weighted utilization ``sum_r beta_nr * x_r / C_r``."""
    _check_keys(job, x)
    total = 0.0
    for unit, v in x.items():
        if unit not in job.betas:
            raise KeyError(f"job {job.id}: missing beta for unit {unit}")
        total += job.betas[unit] * float(v) / mesh.capacity[unit]
    return total


def marginal_range(job: Job, unit: Unit, capacity: float) -> tuple[float, float]:
    """(min, max) of ``f'(x) + beta/C`` over the feasible interval of one unit."""
    spec = job.utility
    cap = job.caps[unit]
    b = job.betas[unit] / capacity
    lo_x = min(DERIV_CLAMP, cap) if spec.family == "poly" else 0.0
    hi = float(spec.deriv(lo_x)) + b
    lo = float(spec.deriv(cap)) + b
    return lo, hi


def welfare_bounds(scenario: Scenario) -> WelfareBounds:
    """Global lower/upper bounds on the marginal social welfare.

    Uses full knowledge of the scenario; online policies receive the result
    as configuration.
    """
    from .mesh import available_units

    if not scenario.jobs:
        raise ValueError("welfare bounds need at least one job")
    lows, highs = [], []
    for job in scenario.jobs:
        for unit in available_units(job, scenario.mesh):
            lo, hi = marginal_range(job, unit, scenario.mesh.capacity[unit])
            lows.append(lo)
            highs.append(hi)
    if not lows:
        # no job can be served anywhere; any positive pair is consistent
        a = min(job.utility.coeff for job in scenario.jobs)
        return WelfareBounds(a, a)
    return WelfareBounds(min(lows), max(highs))


def conjugate_value(job: Job, unit: Unit, p: float, capacity: float) -> tuple[float, float]:
    """``max_{0<=x<=cap} f(x) + beta*x/C - p*x`` and its maximizer.

    Closed form for all three families. Ties on a flat linear slope resolve
    to ``x = 0``.
    """
    spec = job.utility
    cap = job.caps[unit]
    b = job.betas[unit] / capacity
    if spec.family == "linear":
        slope = spec.coeff + b - p
        if slope > 0:
            return slope * cap, cap
        return 0.0, 0.0
    level = p - b
    x = cap if level <= 0 else min(spec.deriv_inverse(level), cap)
    value = float(spec.value(x)) + (b - p) * x
    return value, x
