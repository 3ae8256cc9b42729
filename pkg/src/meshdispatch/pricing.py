"""Marginal-cost curves for resource units.

Each unit is priced at a flat ``iota`` until its utilization reaches the
threshold ``C / (alpha - 1)``, then exponentially up to ``upsilon`` at
full capacity. ``alpha`` is the root of

    alpha - 1 = 1 / (alpha - 1) + log((alpha * ratio - 1) / (alpha - 1))

with ``ratio = upsilon / iota``; it is also the competitive ratio that the
dispatcher guarantees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# returned for utilization beyond capacity; the solver never asks for it
INFINITE_COST = math.inf

ALPHA_BRACKET = (1.0 + 1e-6, 64.0)


class AlphaSolveError(ValueError):
    pass


def alpha_residual(alpha: float, ratio: float) -> float:
    """LHS minus RHS of the alpha equation."""
    return (alpha - 1.0) - 1.0 / (alpha - 1.0) - math.log((alpha * ratio - 1.0) / (alpha - 1.0))


def solve_alpha(ratio: float, bracket: tuple[float, float] = ALPHA_BRACKET) -> float:
    """Solve the alpha equation by bisection.

    The residual is strictly increasing in alpha, so the root is unique.
    """
    if not math.isfinite(ratio) or ratio < 1.0:
        raise AlphaSolveError(f"ratio must be finite and >= 1, got {ratio!r}")
    lo, hi = bracket
    f_lo, f_hi = alpha_residual(lo, ratio), alpha_residual(hi, ratio)
    if f_lo > 0 or f_hi < 0:
        raise AlphaSolveError(
            f"no sign change on [{lo}, {hi}] for ratio {ratio}: residuals {f_lo:.3g}, {f_hi:.3g}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if alpha_residual(mid, ratio) > 0:
            hi = mid
        else:
            lo = mid
    # pick the bracket end with the smaller residual
    return lo if abs(alpha_residual(lo, ratio)) <= abs(alpha_residual(hi, ratio)) else hi


@dataclass(frozen=True)
class PricingCurve:
    capacity: float
    iota: float
    upsilon: float
    alpha_hat: float
    unit: tuple[int, int] | None = None

    @classmethod
    def build(cls, capacity: float, iota: float, upsilon: float,
              alpha_hat: float | None = None, unit=None) -> PricingCurve:
        if alpha_hat is None:
            alpha_hat = solve_alpha(upsilon / iota)
        return cls(capacity, iota, upsilon, alpha_hat, unit)

    @property
    def degenerate(self) -> bool:
        # upsilon == iota: alpha is 2, threshold == capacity, price is flat
        return self.upsilon - self.iota <= 1e-12 * self.iota or self.alpha_hat <= 2.0

    @property
    def threshold(self) -> float:
        return self.capacity / (self.alpha_hat - 1.0)

    @property
    def _scale(self) -> float:
        # A in A * exp(B * w) + iota / alpha
        a = self.alpha_hat
        return (self.upsilon - self.iota) / (math.exp(a) - math.exp(a / (a - 1.0)))

    @property
    def _rate(self) -> float:
        return self.alpha_hat / self.capacity

    def _exp_branch(self, omega):
        return self._scale * math.exp(self._rate * omega) + self.iota / self.alpha_hat

    def __call__(self, omega: float) -> float:
        return marginal_cost(self, omega)


def marginal_cost(curve: PricingCurve, omega: float) -> float:
    if omega > curve.capacity:
        return INFINITE_COST
    if curve.degenerate or omega < curve.threshold:
        return curve.iota
    return curve._exp_branch(omega)


def _antiderivative(curve: PricingCurve, lo: float, hi: float) -> float:
    """Integral of the exponential branch over ``[lo, hi]``."""
    rate = curve._rate
    exp_part = curve._scale / rate * math.exp(rate * lo) * math.expm1(rate * (hi - lo))
    return exp_part + curve.iota / curve.alpha_hat * (hi - lo)


def cost_integral(curve: PricingCurve, omega_start: float, x: float) -> float:
    """Exact integral of the marginal cost over ``[omega_start, omega_start + x]``."""
    end = omega_start + x
    if omega_start < 0 or x < 0:
        raise ValueError("omega_start and x must be non-negative")
    if end > curve.capacity * (1 + 1e-12):
        raise ValueError(f"integral beyond capacity: {omega_start} + {x} > {curve.capacity}")
    if x == 0:
        return 0.0
    if curve.degenerate:
        return curve.iota * x
    w = curve.threshold
    flat = max(0.0, min(end, w) - omega_start)
    total = curve.iota * flat
    lo = max(omega_start, w)
    if end > lo:
        total += _antiderivative(curve, lo, end)
    return total


def build_curves(capacity: dict, iota: float, upsilon: float) -> dict:
    """One curve per unit, all sharing the global (iota, upsilon, alpha)."""
    alpha = solve_alpha(upsilon / iota)
    return {u: PricingCurve(c, iota, upsilon, alpha, u) for u, c in capacity.items()}
