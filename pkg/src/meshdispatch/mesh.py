"""Spatio-temporal resource mesh, jobs and scenarios.

A resource unit is a ``(node, slot)`` pair. Slot ``t`` covers the minutes
``[t * slot_length, (t + 1) * slot_length)``. Everywhere in the package,
units are iterated in canonical ``(t, k)`` order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .utility import UtilitySpec

Unit = tuple[int, int]


class ScenarioError(ValueError):
    """Raised when mesh or scenario data is malformed."""


def unit_order(unit: Unit) -> tuple[int, int]:
    k, t = unit
    return (t, k)


@dataclass(frozen=True)
class ResourceMesh:
    node_count: int
    slot_count: int
    slot_length: float
    capacity: Mapping[Unit, float]

    @property
    def units(self) -> list[Unit]:
        return sorted(self.capacity, key=unit_order)

    def capacities(self) -> list[float]:
        """Capacities in construction (node-major) order."""
        return [self.capacity[(k, t)] for k in range(self.node_count) for t in range(self.slot_count)]

    @property
    def horizon(self) -> float:
        return self.slot_count * self.slot_length


@dataclass(frozen=True)
class Job:
    id: int
    arrival: float
    deadline: float
    workload: float
    eligible_nodes: frozenset[int]
    caps: Mapping[Unit, float]
    utility: UtilitySpec
    betas: Mapping[Unit, float]


@dataclass(frozen=True)
class Scenario:
    mesh: ResourceMesh
    jobs: tuple[Job, ...]
    seed: int = 0
    meta: Mapping[str, object] = field(default_factory=dict)


def build_mesh(node_count: int, slot_count: int, slot_length: float,
               capacities: Iterable[float]) -> ResourceMesh:
    """Build a mesh with capacities assigned node-major, then slot."""
    caps = [float(c) for c in capacities]
    if node_count <= 0 or slot_count <= 0:
        raise ScenarioError("node_count and slot_count must be positive")
    if slot_length <= 0:
        raise ScenarioError("slot_length must be positive")
    if len(caps) != node_count * slot_count:
        raise ScenarioError(
            f"dimension mismatch: got {len(caps)} capacities for "
            f"{node_count} x {slot_count} units")
    bad = [c for c in caps if not c > 0 or not math.isfinite(c)]
    if bad:
        raise ScenarioError(f"non-positive capacity: {bad[0]!r}")
    capacity = {(k, t): caps[k * slot_count + t]
                for k in range(node_count) for t in range(slot_count)}
    return ResourceMesh(node_count, slot_count, float(slot_length), capacity)


def slot_window(arrival: float, deadline: float, slot_length: float) -> tuple[int, int]:
    """Inclusive slot range ``[ceil(a/tau), floor(d/tau)]``; may be empty."""
    return math.ceil(arrival / slot_length), math.floor(deadline / slot_length)


def available_units(job: Job, mesh: ResourceMesh) -> list[Unit]:
    first, last = slot_window(job.arrival, job.deadline, mesh.slot_length)
    first = max(first, 0)
    last = min(last, mesh.slot_count - 1)
    nodes = sorted(k for k in job.eligible_nodes if 0 <= k < mesh.node_count)
    return [(k, t) for t in range(first, last + 1) for k in nodes]


def validate_scenario(scenario: Scenario, integral: bool = False) -> list[str]:
    """Return every invariant violation found in ``scenario``.

    With ``integral=True`` the non-partitionable requirement that every
    per-unit cap equals the job workload is checked too.
    """
    errors: list[str] = []
    mesh = scenario.mesh
    if mesh.node_count <= 0 or mesh.slot_count <= 0 or not mesh.slot_length > 0:
        errors.append("mesh: non-positive dimensions")
    expected = {(k, t) for k in range(mesh.node_count) for t in range(mesh.slot_count)}
    if set(mesh.capacity) != expected:
        errors.append("mesh: capacity keys do not cover the mesh exactly")
    for unit, c in mesh.capacity.items():
        if not c > 0:
            errors.append(f"mesh: capacity at {unit} is not positive ({c})")

    prev: tuple[float, int] | None = None
    seen: set[int] = set()
    for job in scenario.jobs:
        tag = f"job {job.id}"
        if job.id in seen:
            errors.append(f"{tag}: duplicate id")
        seen.add(job.id)
        key = (job.arrival, job.id)
        if prev is not None and key <= prev:
            errors.append(f"{tag}: out of arrival order")
        prev = key
        if job.arrival < 0:
            errors.append(f"{tag}: negative arrival")
        if not job.deadline > job.arrival:
            errors.append(f"{tag}: deadline <= arrival")
        if not job.workload > 0:
            errors.append(f"{tag}: workload must be positive")
        if job.utility.coeff <= 0:
            errors.append(f"{tag}: utility coefficient must be positive")
        stray = [k for k in job.eligible_nodes if not 0 <= k < mesh.node_count]
        if stray:
            errors.append(f"{tag}: eligible nodes outside mesh {sorted(stray)}")
        units = set(available_units(job, mesh))
        if set(job.caps) != units:
            errors.append(f"{tag}: caps keys differ from available units")
        if set(job.betas) != units:
            errors.append(f"{tag}: betas keys differ from available units")
        for unit, cap in job.caps.items():
            if cap < 0:
                errors.append(f"{tag}: negative cap at {unit}")
            if unit in mesh.capacity and cap > mesh.capacity[unit]:
                errors.append(f"{tag}: cap at {unit} exceeds unit capacity")
            if integral and cap != job.workload:
                errors.append(f"{tag}: cap at {unit} differs from workload (integral mode)")
        for unit, beta in job.betas.items():
            if not beta > 0:
                errors.append(f"{tag}: non-positive beta at {unit}")
    return errors


def sort_jobs(jobs: Iterable[Job]) -> tuple[Job, ...]:
    return tuple(sorted(jobs, key=lambda j: (j.arrival, j.id)))


# -- scenario files ---------------------------------------------------------

def _unit_key(unit: Unit) -> str:
    return f"{unit[0]},{unit[1]}"


def _parse_unit(key: str) -> Unit:
    k, t = key.split(",")
    return int(k), int(t)


def scenario_to_dict(scenario: Scenario) -> dict:
    mesh = scenario.mesh
    return {
        "seed": scenario.seed,
        "meta": dict(scenario.meta),
        "mesh": {
            "nodes": mesh.node_count,
            "slots": mesh.slot_count,
            "slot_minutes": mesh.slot_length,
            "capacities": mesh.capacities(),
        },
        "jobs": [
            {
                "id": job.id,
                "arrival": job.arrival,
                "deadline": job.deadline,
                "workload": job.workload,
                "eligible_nodes": sorted(job.eligible_nodes),
                "caps": {_unit_key(u): job.caps[u] for u in sorted(job.caps, key=unit_order)},
                "betas": {_unit_key(u): job.betas[u] for u in sorted(job.betas, key=unit_order)},
                "utility": {"family": job.utility.family, "coeff": job.utility.coeff},
            }
            for job in scenario.jobs
        ],
    }


def scenario_from_dict(data: Mapping) -> Scenario:
    try:
        m = data["mesh"]
        mesh = build_mesh(int(m["nodes"]), int(m["slots"]), float(m["slot_minutes"]), m["capacities"])
        jobs = []
        for j in data["jobs"]:
            jobs.append(Job(
                id=int(j["id"]),
                arrival=float(j["arrival"]),
                deadline=float(j["deadline"]),
                workload=float(j["workload"]),
                eligible_nodes=frozenset(int(k) for k in j["eligible_nodes"]),
                caps={_parse_unit(u): float(v) for u, v in j["caps"].items()},
                betas={_parse_unit(u): float(v) for u, v in j["betas"].items()},
                utility=UtilitySpec(j["utility"]["family"], float(j["utility"]["coeff"])),
            ))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario document: {exc}") from exc
    return Scenario(mesh, sort_jobs(jobs), int(data.get("seed", 0)), dict(data.get("meta", {})))


def dumps_scenario(scenario: Scenario) -> str:
    # json writes floats with repr(), i.e. 17 significant digits
    return json.dumps(scenario_to_dict(scenario), indent=1, sort_keys=True)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(dumps_scenario(scenario))


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text()))
