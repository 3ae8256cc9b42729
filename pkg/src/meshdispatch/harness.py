"""Parameter sweeps over generated scenarios, aggregation and export."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dispatch import POLICIES, DispatchTrace, run_policy
from .generate import GenParams, generate_scenario
from .mesh import Scenario
from .solver import SolverConfig

log = logging.getLogger(__name__)

__version__ = "0.1.0"

AXES = ("duration", "workload", "congestion")
RESULT_COLUMNS = ("sweep_var", "sweep_value", "policy", "seed",
                  "welfare_jobs", "welfare_cluster", "welfare_total", "rejected")
TRACE_COLUMNS = ("job_id", "unit_node", "unit_slot", "x", "accepted", "f_value", "g_value")
SUMMARY_COLUMNS = ("policy", "seed", "welfare_jobs", "welfare_cluster", "welfare_total", "rejected_count")
THREADS_ENV = "MESHDISPATCH_THREADS"


def fmt(v) -> str:
    """Numbers at 12 significant digits, everything else as ``str``."""
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _round12(v):
    return float(f"{v:.12g}") if isinstance(v, float) and math.isfinite(v) else v


def apply_axis(base: GenParams, axis: str, value: float) -> GenParams:
    """Generator parameters for one sweep point.

    ``congestion`` scales demand up and capacity down by the same factor,
    so ``1`` is the base configuration.
    """
    if axis == "duration":
        return base.replace(duration_mean_slots=float(value))
    if axis == "workload":
        return base.replace(workload_mu=float(value))
    if axis == "congestion":
        if not value > 0:
            raise ValueError("congestion level must be positive")
        return base.replace(workload_mu=base.workload_mu * value, capacity_mu=base.capacity_mu / value)
    raise ValueError(f"unknown sweep axis {axis!r}; choose from {AXES}")


@dataclass(frozen=True)
class ExperimentConfig:
    axis: str
    points: tuple
    seeds: tuple
    policies: tuple = ("onsocmax", "max_first", "equal_share")
    base: GenParams = field(default_factory=GenParams)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; choose from {AXES}")
        bad = [p for p in self.policies if p not in POLICIES]
        if bad:
            raise ValueError(f"unknown policies {bad}; choose from {POLICIES}")


@dataclass
class ExperimentRow:
    sweep_var: str
    sweep_value: float
    policy: str
    seed: int
    welfare_jobs: float = math.nan
    welfare_cluster: float = math.nan
    welfare_total: float = math.nan
    rejected: int = 0
    error: str = ""


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def means(self) -> dict:
        """(sweep value, policy) -> (mean welfare_total, standard error, count) over successful rows."""
        groups: dict = {}
        for r in self.rows:
            if not r.error:
                groups.setdefault((r.sweep_value, r.policy), []).append(r.welfare_total)
        out = {}
        for key, vals in sorted(groups.items()):
            a = np.asarray(vals)
            se = float(a.std(ddof=1) / math.sqrt(len(a))) if len(a) > 1 else 0.0
            out[key] = (float(a.mean()), se, len(a))
        return out

    @property
    def failures(self) -> list:
        return [r for r in self.rows if r.error]


def _run_cell(args) -> list:
    """All policies on one (sweep point, seed) scenario."""
    axis, value, seed, policies, base, solver = args
    rows = []
    try:
        scenario = generate_scenario(apply_axis(base, axis, value).replace(seed=int(seed)))
    except Exception as exc:  # recorded per row, never aborts the sweep
        return [ExperimentRow(axis, value, p, seed, error=f"generate: {exc}") for p in policies]
    for policy in policies:
        try:
            tr = run_policy(scenario, policy, solver)
            rows.append(ExperimentRow(axis, value, policy, seed, tr.welfare_jobs, tr.welfare_cluster,
                                      tr.welfare_total, tr.rejected_count))
        except Exception as exc:
            log.warning("sweep cell %s=%s seed %s policy %s failed: %s", axis, value, seed, policy, exc)
            rows.append(ExperimentRow(axis, value, policy, seed, error=f"{type(exc).__name__}: {exc}"))
    return rows


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        n = int(raw) if raw else 1
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    """Every (sweep point, seed, policy) combination, one row each."""
    cells = [(config.axis, v, s, tuple(config.policies), config.base, config.solver)
             for v in config.points for s in config.seeds]
    workers = workers or worker_count()
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_cell, cells))
    else:
        chunks = [_run_cell(c) for c in cells]
    rows = [r for chunk in chunks for r in chunk]
    order = {p: i for i, p in enumerate(config.policies)}
    rows.sort(key=lambda r: (r.sweep_value, order[r.policy], r.seed))
    meta = {
        "version": __version__,
        "axis": config.axis,
        "points": list(config.points),
        "seeds": list(config.seeds),
        "policies": list(config.policies),
        "base": config.base.to_dict(),
        "solver": asdict(config.solver),
    }
    return ExperimentResult(rows, meta)


def export_results(result: ExperimentResult, fmt_: str, path) -> Path:
    """Write rows as CSV or JSON (rows plus metadata)."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt_ == "csv":
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(RESULT_COLUMNS)
                for r in result.rows:
                    w.writerow([fmt(getattr(r, c)) for c in RESULT_COLUMNS])
        elif fmt_ == "json":
            doc = {"metadata": result.metadata,
                   "rows": [{k: _round12(v) for k, v in asdict(r).items()} for r in result.rows]}
            path.write_text(json.dumps(doc, indent=1, allow_nan=True))
        else:
            raise ValueError(f"unknown format {fmt_!r}; choose csv or json")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def load_results(path) -> ExperimentResult:
    doc = json.loads(Path(path).read_text())
    return ExperimentResult([ExperimentRow(**r) for r in doc["rows"]], doc.get("metadata", {}))


def trace_rows(scenario: Scenario, trace: DispatchTrace) -> list:
    """Per-unit allocation rows for the trace CSV."""
    jobs = {j.id: j for j in scenario.jobs}
    rows = []
    for job_id, alloc, accepted in trace.per_job:
        job = jobs[job_id]
        for (k, t), x in sorted(alloc.x.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            f = float(job.utility.value(x))
            g = job.betas[(k, t)] * x / scenario.mesh.capacity[(k, t)]
            rows.append((job_id, k, t, float(x), int(accepted), f, g))
    return rows


def export_trace(scenario: Scenario, trace: DispatchTrace, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace_rows(scenario, trace):
            w.writerow([fmt(v) for v in row])
    return path


def summary_row(scenario: Scenario, trace: DispatchTrace) -> tuple:
    return (trace.policy, scenario.seed, trace.welfare_jobs, trace.welfare_cluster,
            trace.welfare_total, trace.rejected_count)


def export_summary(rows: Sequence[tuple], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path
