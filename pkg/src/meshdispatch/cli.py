"""Command-line entry point: ``meshdispatch <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .dispatch import POLICIES, run_policy
from .generate import GenParams, generate_scenario
from .harness import (AXES, ExperimentConfig, export_results, export_summary, export_trace, fmt,
                      run_experiment, summary_row, trace_rows)
from .mesh import ScenarioError, load_scenario, save_scenario, validate_scenario
from .oracle import competitive_ratio
from .pricing import AlphaSolveError, alpha_residual, solve_alpha
from .solver import SolverConfig
from .utility import FAMILIES

RATIO_COLUMNS = ("seed", "theta_star", "theta_on", "ratio", "alpha_hat", "bound_ok")


def _add_gen_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("generator")
    g.add_argument("--family", choices=FAMILIES, default="linear")
    g.add_argument("--nodes", type=int, default=10)
    g.add_argument("--slots", type=int, default=24)
    g.add_argument("--jobs", type=int, default=20)
    g.add_argument("--duration", type=float, default=4.0, help="mean service duration in slots")
    g.add_argument("--workload", type=float, default=18.0, help="mean job workload")
    g.add_argument("--capacity", type=float, default=20.0, help="mean unit capacity")
    g.add_argument("--coeff", type=float, nargs=2, default=(1.0, 3.0), metavar=("LO", "HI"))
    g.add_argument("--locality", type=float, default=1.0)
    g.add_argument("--integral", action="store_true", help="non-partitionable jobs")


def _gen_params(a) -> GenParams:
    return GenParams(nodes=a.nodes, slots=a.slots, job_count=a.jobs, duration_mean_slots=a.duration,
                     workload_mu=a.workload, capacity_mu=a.capacity, utility_family=a.family,
                     coeff_range=tuple(a.coeff), locality=a.locality, integral=a.integral)


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("solver")
    g.add_argument("--sigma0", type=float)
    g.add_argument("--growth", type=float)
    g.add_argument("--theta1", type=float)
    g.add_argument("--theta2", type=float)
    g.add_argument("--eta", type=float)
    g.add_argument("--eps", type=float)
    g.add_argument("--lr", type=float)
    g.add_argument("--decay", type=float)
    g.add_argument("--max-outer", type=int)
    g.add_argument("--max-inner", type=int)


def _solver_config(a) -> SolverConfig:
    return SolverConfig().with_overrides(
        sigma0=a.sigma0, growth=a.growth, theta1=a.theta1, theta2=a.theta2, eta_final=a.eta,
        eps_final=a.eps, learning_rate=a.lr, decay=a.decay, max_outer=a.max_outer, max_inner=a.max_inner)


def cmd_gen(a) -> int:
    params = _gen_params(a)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in range(a.seed, a.seed + a.count):
        path = out / f"scenario_{seed:04d}.json"
        save_scenario(generate_scenario(params.replace(seed=seed)), path)
        print(path)
    return 0


def cmd_run(a) -> int:
    scenario = load_scenario(a.scenario)
    problems = validate_scenario(scenario, integral=a.policy == "onsocmax_integral")
    if problems:
        for msg in problems:
            print(f"invalid scenario: {msg}", file=sys.stderr)
        return 2
    trace = run_policy(scenario, a.policy, _solver_config(a))
    out = Path(a.out)
    stem = f"{Path(a.scenario).stem}_{a.policy}"
    if a.format == "csv":
        export_trace(scenario, trace, out / f"{stem}_trace.csv")
        export_summary([summary_row(scenario, trace)], out / f"{stem}_summary.csv")
    else:
        out.mkdir(parents=True, exist_ok=True)
        doc = {"summary": dict(zip(("policy", "seed", "welfare_jobs", "welfare_cluster", "welfare_total",
                                    "rejected_count"), summary_row(scenario, trace))),
               "trace": [dict(zip(("job_id", "unit_node", "unit_slot", "x", "accepted", "f_value", "g_value"), r))
                         for r in trace_rows(scenario, trace)]}
        (out / f"{stem}.json").write_text(json.dumps(doc, indent=1))
    print(f"policy={a.policy} welfare_total={fmt(trace.welfare_total)} rejected={trace.rejected_count} "
          f"unconverged={trace.unconverged_count}")
    return 0


def _ratio_scenarios(a) -> list:
    src = Path(a.scenarios)
    if src.is_dir():
        files = sorted(src.glob("*.json"))
        if not files:
            raise ScenarioError(f"no scenario files in {src}")
        return [load_scenario(f) for f in files]
    try:
        count = int(a.scenarios)
    except ValueError:
        raise ScenarioError(f"--scenarios must be a directory or a count, got {a.scenarios!r}") from None
    params = _gen_params(a)
    return [generate_scenario(params.replace(seed=s)) for s in range(a.seed, a.seed + count)]


def cmd_ratio(a) -> int:
    report = competitive_ratio(_ratio_scenarios(a), _solver_config(a), a.policy)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RATIO_COLUMNS)
        for r in report.rows:
            w.writerow([fmt(getattr(r, c)) for c in RATIO_COLUMNS])
    print(f"scenarios={len(report.rows)} max_ratio={fmt(report.max_ratio)} all_ok={report.all_ok}")
    return 0 if report.all_ok else 1


def cmd_alpha(a) -> int:
    try:
        alpha = solve_alpha(a.ratio)
    except AlphaSolveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"alpha={alpha:.15g} residual={alpha_residual(alpha, a.ratio):.3e}")
    return 0


def cmd_sweep(a) -> int:
    config = ExperimentConfig(axis=a.axis, points=tuple(a.points), seeds=tuple(range(a.seed, a.seed + a.seeds)),
                              policies=tuple(a.policies), base=_gen_params(a), solver=_solver_config(a))
    result = run_experiment(config)
    path = export_results(result, a.format, a.out)
    for (value, policy), (mean, se, n) in result.means().items():
        print(f"{a.axis}={fmt(value)} policy={policy} mean={mean:.6g} se={se:.3g} n={n}")
    print(f"rows={len(result.rows)} failures={len(result.failures)} -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshdispatch", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write generated scenario files")
    _add_gen_flags(p)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--out", default="scenarios")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="replay one scenario under a policy")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", choices=POLICIES, default="onsocmax")
    p.add_argument("--out", default="out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ratio", help="offline/online welfare ratio over scenarios")
    p.add_argument("--scenarios", required=True, help="directory of scenario files, or a count to generate")
    p.add_argument("--policy", choices=POLICIES, default="onsocmax")
    p.add_argument("--out", default="report.csv")
    p.add_argument("--seed", type=int, default=0, help="first seed when generating")
    _add_gen_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_ratio)

    p = sub.add_parser("alpha", help="solve for alpha given upsilon/iota")
    p.add_argument("ratio", type=float)
    p.set_defaults(func=cmd_alpha)

    p = sub.add_parser("sweep", help="parameter sweep over generated scenarios")
    p.add_argument("--axis", choices=AXES, required=True)
    p.add_argument("--points", type=float, nargs="+", required=True)
    p.add_argument("--seeds", type=int, default=30, help="number of seeds")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--policies", nargs="+", choices=POLICIES, default=["onsocmax", "max_first", "equal_share"])
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    _add_gen_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
