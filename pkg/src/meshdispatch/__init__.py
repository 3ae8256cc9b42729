"""Online dispatch of deadline-aware multi-server jobs over a resource mesh."""

from .dispatch import POLICIES, DispatchTrace, OnlineState, run_policy
from .generate import GenParams, generate_scenario
from .mesh import Job, ResourceMesh, Scenario, ScenarioError, build_mesh, load_scenario, save_scenario
from .oracle import brute_force_optimum, competitive_ratio, offline_optimum
from .pricing import PricingCurve, cost_integral, solve_alpha
from .solver import Allocation, PseudoWelfareProblem, SolverConfig, solve_pseudo_welfare
from .utility import UtilitySpec, WelfareBounds, welfare_bounds

__version__ = "0.1.0"
