"""End-to-end orchestration: scenario -> world models -> game -> solve -> certify.

This is the one code path behind both the service endpoints and the CLI, so
reports stay byte-identical however the pipeline is invoked. Timings are kept
out of report payloads; they are returned separately.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .abstraction import (
    RegionPartition,
    build_game_direct,
    collision_hotspots,
    lift_strategy,
)
from .evaluation import EvaluationReport, SimulationEstimate, certify, simulate, upper_bound
from .export import dumps_explicit, emit_dot, emit_prism_pg, emit_prism_pomdp
from .gridworld import Scenario, VisibilityTable, build_opponent_graph, build_robot_graph
from .model import ExplicitModel, make_absorbing
from .solver import Query, ValueResult, solve_pg
from .worldmodel import UniformPolicy, attach_observations, build_world_mdp, label_states

EXPORT_KINDS = ("explicit", "dot", "external")
REFINEMENTS = ("none", "one-step", "regions")


def scenario_digest(scenario: Scenario) -> str:
    doc = json.dumps(scenario.to_document(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


@dataclass
class PipelineResult:
    scenario: Scenario
    refinement: str
    report: EvaluationReport
    pg: ExplicitModel
    pg_result: ValueResult
    pomdp: ExplicitModel
    world_mdp: ExplicitModel
    strategy_text: str
    hotspots: list
    simulation: Optional[SimulationEstimate]
    threshold_met: Optional[bool]
    artifacts: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def counts(self) -> dict[str, int]:
        return {
            "pg_states": self.pg.num_states,
            "pg_choices": self.pg.num_choices,
            "pg_transitions": self.pg.num_transitions,
            "pomdp_states": self.pomdp.num_states,
            "mdp_states": self.world_mdp.num_states,
        }


def run_pipeline(
    scenario: Scenario,
    refine: str = "one-step",
    tol: float = 1e-6,
    threshold: Optional[float] = None,
    runs: int = 0,
    seed: int = 0,
    horizon: Optional[int] = None,
    exports: Sequence[str] = (),
    partition: Optional[RegionPartition] = None,
    compute_bound: bool = True,
    compute_certified: bool = True,
) -> PipelineResult:
    if refine not in REFINEMENTS:
        raise ValueError(f"unknown refinement {refine!r}, expected one of {REFINEMENTS}")
    for kind in exports:
        if kind not in EXPORT_KINDS:
            raise ValueError(f"unknown export kind {kind!r}, expected one of {EXPORT_KINDS}")
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    robot = build_robot_graph(scenario)
    opponents = [build_opponent_graph(scenario, i + 1) for i in range(len(scenario.opponent_starts))]
    policies = [UniformPolicy(g) for g in opponents]
    vis = VisibilityTable(scenario)
    mdp = label_states(build_world_mdp([robot, *opponents], policies), scenario)
    pomdp = make_absorbing(attach_observations(mdp, vis))
    timings["build_world_s"] = time.perf_counter() - t0

    mdp_bound = None
    if compute_bound:
        t0 = time.perf_counter()
        mdp_bound = upper_bound(make_absorbing(mdp), tol)
        timings["mdp_bound_s"] = time.perf_counter() - t0

    if refine == "regions" and partition is None:
        partition = RegionPartition.from_scenario(scenario)

    t0 = time.perf_counter()
    pg = build_game_direct(scenario, robot, opponents[0], policies[0], vis, mode=refine, partition=partition)
    timings["build_game_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pg_result = solve_pg(pg, Query(threshold=threshold), tol)
    timings["solve_s"] = time.perf_counter() - t0
    pg_value = pg_result.at_initial(pg)

    lifted = lift_strategy(pg, pg_result.strategy)
    certified = None
    if compute_certified:
        t0 = time.perf_counter()
        certified = certify(pomdp, lifted, tol)
        timings["certify_s"] = time.perf_counter() - t0

    sim = None
    if runs > 0:
        t0 = time.perf_counter()
        sim = simulate(pomdp, lifted, runs=runs, horizon=horizon, seed=seed)
        timings["simulate_s"] = time.perf_counter() - t0

    hotspots = collision_hotspots(pg, pg_result)
    report = EvaluationReport(
        scenario_digest=scenario_digest(scenario),
        refinement=refine,
        pg_value=pg_value,
        certified_value=certified,
        mdp_upper_bound=mdp_bound,
        mc_estimate=sim.estimate if sim else None,
        mc_half_width=sim.half_width if sim else None,
        mc_runs=runs if sim else 0,
        tol=tol,
    )
    threshold_met = None
    if threshold is not None:
        established = certified if certified is not None else pg_value
        threshold_met = established >= threshold

    artifacts: dict[str, str] = {}
    if "explicit" in exports:
        artifacts["game.explicit"] = dumps_explicit(pg)
    if "dot" in exports:
        artifacts["game.dot"] = emit_dot(pg, max_states=5000)
    if "external" in exports:
        artifacts["game.prism"] = emit_prism_pg(pg)
        artifacts["pomdp.prism"] = emit_prism_pomdp(pomdp)

    return PipelineResult(
        scenario=scenario,
        refinement=refine,
        report=report,
        pg=pg,
        pg_result=pg_result,
        pomdp=pomdp,
        world_mdp=mdp,
        strategy_text=pg_result.strategy.dump(pg),
        hotspots=hotspots,
        simulation=sim,
        threshold_met=threshold_met,
        artifacts=artifacts,
        timings=timings,
    )


def hotspots_csv(hotspots) -> str:
    lines = ["x,y,collision_mass"]
    for (x, y), mass in hotspots:
        lines.append(f"{x},{y},{mass!r}")
    return "\n".join(lines) + "\n"


# -- benchmark harness -------------------------------------------------------

BENCH_COLUMNS = (
    "scenario",
    "states",
    "choices",
    "transitions",
    "pg_value",
    "certified_value",
    "mdp_bound",
    "mc_estimate",
    "build_s",
    "solve_s",
)


@dataclass
class BenchRow:
    scenario: str
    states: int
    choices: int
    transitions: int
    pg_value: float
    certified_value: Optional[float]
    mdp_bound: Optional[float]
    mc_estimate: Optional[float]
    build_s: float
    solve_s: float

    def csv_cells(self) -> list[str]:
        def num(v, fmt="{:.6f}"):
            return "" if v is None else fmt.format(v)

        return [
            self.scenario,
            str(self.states),
            str(self.choices),
            str(self.transitions),
            num(self.pg_value),
            num(self.certified_value),
            num(self.mdp_bound),
            num(self.mc_estimate),
            num(self.build_s, "{:.3f}"),
            num(self.solve_s, "{:.3f}"),
        ]


def bench_csv(rows: Sequence[BenchRow]) -> str:
    lines = [",".join(BENCH_COLUMNS)]
    for row in rows:
        lines.append(",".join(row.csv_cells()))
    return "\n".join(lines) + "\n"


def run_bench(
    suite: str,
    sizes: Optional[Sequence[int]] = None,
    obstacles: Optional[Sequence[int]] = None,
    seed: int = 7,
    tol: float = 1e-6,
    runs: int = 0,
    compute_bound: bool = True,
    compute_certified: bool = True,
) -> list[BenchRow]:
    """Run one scenario family and produce one result row per configuration."""
    from . import scenarios

    jobs: list[tuple[str, Scenario, str]] = []
    if suite == "sc1":
        for n in sizes or (3, 4, 5, 6):
            jobs.append((f"sc1-{n}x{n}", scenarios.sc1(n), "one-step"))
    elif suite == "sc2":
        for n in sizes or (11,):
            jobs.append((f"sc2-{n}x{n}", scenarios.sc2(n), "one-step"))
    elif suite == "sc3":
        for k in obstacles or (10, 40):
            jobs.append((f"sc3-{k}obs", scenarios.sc3(seed=seed, obstacles=k), "one-step"))
    elif suite == "sc4":
        jobs.append(("sc4-0cam", scenarios.sc4(0), "one-step"))
        jobs.append(("sc4-2cam", scenarios.sc4(2), "one-step"))
    elif suite == "sc5":
        for n in sizes or (40,):
            jobs.append((f"sc5-4x{n}", scenarios.sc5(n), "one-step"))
            jobs.append((f"sc5-4x{n}+ref", scenarios.sc5(n), "regions"))
    else:
        raise ValueError(f"unknown suite {suite!r}, expected sc1..sc5")

    rows: list[BenchRow] = []
    for label, scenario, refine in jobs:
        result = run_pipeline(
            scenario,
            refine=refine,
            tol=tol,
            runs=runs,
            seed=seed,
            compute_bound=compute_bound,
            compute_certified=compute_certified,
        )
        build_s = result.timings.get("build_world_s", 0.0) + result.timings.get("build_game_s", 0.0)
        rows.append(
            BenchRow(
                scenario=label,
                states=result.pg.num_states,
                choices=result.pg.num_choices,
                transitions=result.pg.num_transitions,
                pg_value=result.report.pg_value,
                certified_value=result.report.certified_value,
                mdp_bound=result.report.mdp_upper_bound,
                mc_estimate=result.report.mc_estimate,
                build_s=build_s,
                solve_s=result.timings.get("solve_s", 0.0),
            )
        )
    return rows
