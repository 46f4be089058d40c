"""Certify lifted strategies on the world POMDP and cross-check by simulation.

Fixing the lifted strategy on the POMDP yields a chain over (world state,
memory) pairs; its reach-avoid value at the initial pair is the strategy's
true safety level, at least the game value it was extracted from.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .abstraction import ObservationStrategy
from .model import ExplicitModel, ModelBuilder
from .solver import Query, ValueResult, evaluate_mc, solve_mdp
from .worldmodel import WorldModelMeta

Z95 = 1.959963984540054


class EvaluationError(RuntimeError):
    module = "evaluation"


def _obs_tuple(meta: WorldModelMeta, lifted: ObservationStrategy, s: int) -> tuple:
    r = int(meta.robot_pos[s])
    c = int(meta.opp_cell[s, 0])
    j = int(meta.turn[s])
    if lifted.ctx.sees(r, c):
        return (r, c, j)
    return (r, None, j)


def build_product_chain(pomdp: ExplicitModel, lifted: ObservationStrategy) -> ExplicitModel:
    """Chain over (world state, strategy memory) with the strategy's action fixed."""
    meta = pomdp.meta
    if not isinstance(meta, WorldModelMeta) or meta.num_opponents != 1:
        raise EvaluationError("certification needs a single-opponent world POMDP")
    if len(meta.free_cells) != len(lifted.ctx.free):
        raise EvaluationError("strategy and POMDP disagree on the free-cell space")
    builder = ModelBuilder("mc")
    index: dict[tuple[int, int], int] = {}
    queue: deque[tuple[int, int]] = deque()

    def intern(key: tuple[int, int]) -> int:
        sid = index.get(key)
        if sid is None:
            s, m = key
            sid = builder.add_state(
                f"{pomdp.state_name[s]} @ {lifted.memory_name(m)}",
                goal=bool(pomdp.goal[s]),
                bad=bool(pomdp.bad[s]),
            )
            index[key] = sid
            queue.append(key)
        return sid

    init = intern((pomdp.initial, lifted.initial_memory()))
    while queue:
        key = queue.popleft()
        sid = index[key]
        s, m = key
        if pomdp.goal[s] or pomdp.bad[s]:
            builder.add_choice(sid, "done", ((sid, 1.0),))
            continue
        if int(meta.turn[s]) == 0:
            action = lifted.output(m)
        else:
            action = "tick"
        choice = pomdp.choice_of(s, action)
        out = []
        for t, p in pomdp.choice_transitions(choice):
            m2 = lifted.update(m, action, _obs_tuple(meta, lifted, t))
            out.append((intern((t, m2)), p))
        builder.add_choice(sid, action, out)
    return builder.finish(init, meta=None)


def certify(pomdp: ExplicitModel, lifted: ObservationStrategy, tol: float = 1e-6) -> float:
    """True safety level of the lifted strategy on the world POMDP."""
    chain = build_product_chain(pomdp, lifted)
    result = evaluate_mc(chain, Query(), tol)
    return result.at_initial(chain)


def upper_bound(world_mdp: ExplicitModel, tol: float = 1e-6) -> float:
    """Value of the fully observable world MDP.

    An upper bound on what any observation-based strategy can achieve; the
    optimal MDP scheduler itself is in general not observation-based.
    """
    return solve_mdp(world_mdp, Query(), tol).at_initial(world_mdp)


@dataclass(frozen=True)
class SimulationEstimate:
    estimate: float
    ci_low: float
    ci_high: float
    runs: int
    goal_runs: int
    bad_runs: int
    truncated_runs: int

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2.0


def wilson_interval(successes: int, runs: int, z: float = Z95) -> tuple[float, float]:
    if runs == 0:
        return (0.0, 1.0)
    p = successes / runs
    denom = 1.0 + z * z / runs
    center = (p + z * z / (2 * runs)) / denom
    spread = z * math.sqrt(p * (1 - p) / runs + z * z / (4 * runs * runs)) / denom
    return (max(0.0, center - spread), min(1.0, center + spread))


def simulate(
    pomdp: ExplicitModel,
    lifted: ObservationStrategy,
    runs: int,
    horizon: Optional[int] = None,
    seed: int = 0,
) -> SimulationEstimate:
    """Sample trajectories under the lifted strategy and the opponent policy.

    Runs not absorbed within the horizon count as failures, keeping the
    estimate conservative. Sampling is vectorized over runs from a single
    generator seeded by `seed`, so results are a deterministic function of
    (model, strategy, runs, horizon, seed).
    """
    if runs <= 0:
        raise EvaluationError("simulate needs a positive number of runs")
    meta = pomdp.meta
    if horizon is None:
        scenario = meta.scenario if isinstance(meta, WorldModelMeta) else None
        if scenario is None:
            raise EvaluationError("horizon required for models without scenario provenance")
        horizon = 100 * scenario.grid_diameter()
    chain = build_product_chain(pomdp, lifted)

    n = chain.num_states
    widths = np.diff(chain.trans_start)
    max_b = int(widths.max())
    cum = np.ones((n, max_b), dtype=np.float64)
    tgt = np.zeros((n, max_b), dtype=np.int64)
    for s in range(n):
        lo, hi = int(chain.trans_start[s]), int(chain.trans_start[s + 1])
        row = np.cumsum(chain.trans_prob[lo:hi])
        cum[s, : hi - lo] = row
        cum[s, hi - lo :] = 1.0
        tgt[s, : hi - lo] = chain.trans_target[lo:hi]
        tgt[s, hi - lo :] = chain.trans_target[hi - 1]

    rng = np.random.default_rng(seed)
    state = np.full(runs, chain.initial, dtype=np.int64)
    active = ~(chain.goal[state] | chain.bad[state])
    for _ in range(horizon):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        u = rng.random(len(idx))
        rows = state[idx]
        branch = (u[:, None] > cum[rows]).sum(axis=1)
        state[idx] = tgt[rows, branch]
        absorbed = chain.goal[state[idx]] | chain.bad[state[idx]]
        active[idx[absorbed]] = False
    goal_runs = int(chain.goal[state].sum())
    bad_runs = int(chain.bad[state].sum())
    truncated = runs - goal_runs - bad_runs
    lo, hi = wilson_interval(goal_runs, runs)
    return SimulationEstimate(
        estimate=goal_runs / runs,
        ci_low=lo,
        ci_high=hi,
        runs=runs,
        goal_runs=goal_runs,
        bad_runs=bad_runs,
        truncated_runs=truncated,
    )


@dataclass(frozen=True)
class EvaluationReport:
    """The value sandwich for one scenario: game value <= certified <= MDP bound."""

    scenario_digest: str
    refinement: str
    pg_value: float
    certified_value: Optional[float]
    mdp_upper_bound: Optional[float]
    mc_estimate: Optional[float] = None
    mc_half_width: Optional[float] = None
    mc_runs: int = 0
    tol: float = 1e-6

    def __post_init__(self) -> None:
        slack = 10 * self.tol
        if self.certified_value is not None and self.pg_value > self.certified_value + slack:
            raise EvaluationError(
                f"sandwich violated: game value {self.pg_value} exceeds certified {self.certified_value}"
            )
        if (
            self.certified_value is not None
            and self.mdp_upper_bound is not None
            and self.certified_value > self.mdp_upper_bound + slack
        ):
            raise EvaluationError(
                f"sandwich violated: certified {self.certified_value} exceeds bound {self.mdp_upper_bound}"
            )

    def to_dict(self) -> dict:
        return {
            "scenario_digest": self.scenario_digest,
            "refinement": self.refinement,
            "pg_value": self.pg_value,
            "certified_value": self.certified_value,
            "mdp_upper_bound": self.mdp_upper_bound,
            "mc_estimate": self.mc_estimate,
            "mc_half_width": self.mc_half_width,
            "mc_runs": self.mc_runs,
            "tol": self.tol,
        }

    def to_text(self) -> str:
        lines = [
            f"scenario  {self.scenario_digest}",
            f"refine    {self.refinement}",
            f"pg_value  {self.pg_value:.6f}",
        ]
        if self.certified_value is not None:
            lines.append(f"certified {self.certified_value:.6f}")
        if self.mdp_upper_bound is not None:
            lines.append(f"mdp_bound {self.mdp_upper_bound:.6f}")
        if self.mc_estimate is not None:
            lines.append(f"mc_est    {self.mc_estimate:.6f} +/- {self.mc_half_width:.6f} ({self.mc_runs} runs)")
        return "\n".join(lines) + "\n"
