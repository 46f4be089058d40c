"""HTTP service wrapping the synthesis pipeline.

Endpoints accept the scenario document as a JSON object and return reports,
strategy dumps, and export artifacts. Handlers are plain synchronous
functions so the CLI can call them in process; mount the app with uvicorn for
remote clients.
"""

from __future__ import annotations

import json
from typing import Any, Literal, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .abstraction import RegionPartition, lift_strategy
from .gridworld import Scenario, parse_scenario
from .pipeline import BENCH_COLUMNS, bench_csv, hotspots_csv, run_bench, run_pipeline
from .solver import parse_strategy_dump, Strategy
from .evaluation import simulate

_MODULE_ERRORS = (ValueError, RuntimeError)


class HealthResponse(BaseModel):
    status: str
    version: str


class ReportModel(BaseModel):
    scenario_digest: str
    refinement: str
    pg_value: float
    certified_value: Optional[float]
    mdp_upper_bound: Optional[float]
    mc_estimate: Optional[float] = None
    mc_half_width: Optional[float] = None
    mc_runs: int = 0
    tol: float


class CountsModel(BaseModel):
    pg_states: int
    pg_choices: int
    pg_transitions: int
    pomdp_states: int
    mdp_states: int


class SolveRequest(BaseModel):
    scenario: dict[str, Any]
    refine: Literal["none", "one-step", "regions"] = "one-step"
    regions: Optional[list[list[tuple[int, int]]]] = None
    tol: float = Field(default=1e-6, gt=0)
    threshold: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    runs: int = Field(default=0, ge=0)
    seed: int = 0
    horizon: Optional[int] = Field(default=None, gt=0)
    exports: list[Literal["explicit", "dot", "external"]] = []
    compute_bound: bool = True
    compute_certified: bool = True


class SolveResponse(BaseModel):
    report: ReportModel
    p_safe: Optional[bool]
    counts: CountsModel
    strategy: str
    hotspots_csv: str
    artifacts: dict[str, str]
    timings: dict[str, float]


class SimulateRequest(BaseModel):
    scenario: dict[str, Any]
    refine: Literal["none", "one-step", "regions"] = "one-step"
    regions: Optional[list[list[tuple[int, int]]]] = None
    strategy: Optional[str] = None
    tol: float = Field(default=1e-6, gt=0)
    runs: int = Field(default=10000, gt=0)
    seed: int = 0
    horizon: Optional[int] = Field(default=None, gt=0)


class SimulateResponse(BaseModel):
    estimate: float
    ci_low: float
    ci_high: float
    runs: int
    goal_runs: int
    bad_runs: int
    truncated_runs: int


class BenchRequest(BaseModel):
    suite: Literal["sc1", "sc2", "sc3", "sc4", "sc5"]
    sizes: Optional[list[int]] = None
    obstacles: Optional[list[int]] = None
    seed: int = 7
    tol: float = Field(default=1e-6, gt=0)
    runs: int = Field(default=0, ge=0)
    compute_bound: bool = True
    compute_certified: bool = True


class BenchResponse(BaseModel):
    columns: list[str]
    rows: list[list[str]]
    csv: str


def _scenario_from(doc: dict, regions: Optional[list[list[tuple[int, int]]]]) -> tuple[Scenario, Optional[RegionPartition]]:
    scenario = parse_scenario(json.dumps(doc))
    partition = None
    if regions is not None:
        partition = RegionPartition(tuple(frozenset((x, y) for x, y in block) for block in regions))
        partition.validate(scenario)
    return scenario, partition


def _fail(exc: Exception) -> HTTPException:
    module = getattr(exc, "module", "pipeline")
    return HTTPException(status_code=400, detail=f"{module}: {exc}")


def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


def solve(request: SolveRequest) -> SolveResponse:
    try:
        scenario, partition = _scenario_from(request.scenario, request.regions)
        result = run_pipeline(
            scenario,
            refine=request.refine,
            tol=request.tol,
            threshold=request.threshold,
            runs=request.runs,
            seed=request.seed,
            horizon=request.horizon,
            exports=request.exports,
            partition=partition,
            compute_bound=request.compute_bound,
            compute_certified=request.compute_certified,
        )
    except _MODULE_ERRORS as exc:
        raise _fail(exc)
    return SolveResponse(
        report=ReportModel(**result.report.to_dict()),
        p_safe=result.threshold_met,
        counts=CountsModel(**result.counts),
        strategy=result.strategy_text,
        hotspots_csv=hotspots_csv(result.hotspots),
        artifacts=result.artifacts,
        timings=result.timings,
    )


def simulate_endpoint(request: SimulateRequest) -> SimulateResponse:
    try:
        scenario, partition = _scenario_from(request.scenario, request.regions)
        result = run_pipeline(
            scenario,
            refine=request.refine,
            tol=request.tol,
            partition=partition,
            compute_bound=False,
            compute_certified=False,
        )
        lifted = lift_strategy(result.pg, result.pg_result.strategy)
        if request.strategy is not None:
            lifted = _lifted_from_dump(result, request.strategy)
        est = simulate(result.pomdp, lifted, runs=request.runs, horizon=request.horizon, seed=request.seed)
    except _MODULE_ERRORS as exc:
        raise _fail(exc)
    return SimulateResponse(
        estimate=est.estimate,
        ci_low=est.ci_low,
        ci_high=est.ci_high,
        runs=est.runs,
        goal_runs=est.goal_runs,
        bad_runs=est.bad_runs,
        truncated_runs=est.truncated_runs,
    )


def _lifted_from_dump(result, dump_text: str):
    import numpy as np

    p1_rows, p2_rows = parse_strategy_dump(dump_text)
    pg = result.pg
    choice = np.full(pg.num_states, -1, dtype=np.int64)
    adversary = np.full(pg.num_states, -1, dtype=np.int64)
    for s in range(pg.num_states):
        name = pg.state_name[s]
        if pg.player[s] == 1:
            action = p1_rows.get(name)
            if action is None:
                raise ValueError(f"strategy dump misses Player-1 state {name!r}")
            choice[s] = pg.choice_of(s, action) - pg.choice_start[s]
        else:
            action = p2_rows.get(name)
            adversary[s] = (pg.choice_of(s, action) - pg.choice_start[s]) if action is not None else 0
    return lift_strategy(pg, Strategy(choice=choice, adversary_choice=adversary))


def bench(request: BenchRequest) -> BenchResponse:
    try:
        rows = run_bench(
            request.suite,
            sizes=request.sizes,
            obstacles=request.obstacles,
            seed=request.seed,
            tol=request.tol,
            runs=request.runs,
            compute_bound=request.compute_bound,
            compute_certified=request.compute_certified,
        )
    except _MODULE_ERRORS as exc:
        raise _fail(exc)
    return BenchResponse(
        columns=list(BENCH_COLUMNS),
        rows=[row.csv_cells() for row in rows],
        csv=bench_csv(rows),
    )


def create_app() -> FastAPI:
    app = FastAPI(title="gridgames", version=__version__)
    app.get("/health", response_model=HealthResponse)(health)
    app.post("/solve", response_model=SolveResponse)(solve)
    app.post("/simulate", response_model=SimulateResponse)(simulate_endpoint)
    app.post("/bench", response_model=BenchResponse)(bench)
    return app


app = create_app()
