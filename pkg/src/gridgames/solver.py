"""Reach-avoid solving: value iteration for games, MDPs, and chains.

Values are the maximal (for Player 1) probability of reaching a goal state
while avoiding bad states. Iteration starts from the goal indicator and
converges monotonically from below; strategies are extracted with
lowest-index tie-breaking so results are deterministic functions of the model.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import ExplicitModel, ModelError


class SolverError(RuntimeError):
    module = "solver"


@dataclass(frozen=True)
class Query:
    """A maximal reach-avoid query, optionally with a threshold to establish."""

    direction: str = "maximize"
    goal_label: str = "goal"
    bad_label: str = "bad"
    threshold: Optional[float] = None

    def __post_init__(self) -> None:
        if self.direction != "maximize":
            raise SolverError(f"only maximizing queries are supported, got {self.direction!r}")
        if self.threshold is not None and not 0.0 <= self.threshold <= 1.0:
            raise SolverError(f"threshold must lie in [0,1], got {self.threshold}")


@dataclass
class Strategy:
    """Memoryless deterministic choices: action index per Player-1 / Player-2 state."""

    choice: np.ndarray            # int64 per state; -1 where not a P1 decision
    adversary_choice: np.ndarray  # int64 per state; -1 where not a P2 decision

    def chosen_index(self, s: int) -> int:
        c = int(self.choice[s]) if self.choice[s] >= 0 else int(self.adversary_choice[s])
        if c < 0:
            raise SolverError(f"strategy undefined on state {s}")
        return c

    def action_name(self, model: ExplicitModel, s: int) -> str:
        return model.choice_action[int(model.choice_start[s]) + self.chosen_index(s)]

    def induced_choices(self, model: ExplicitModel) -> np.ndarray:
        idx = np.where(self.choice >= 0, self.choice, self.adversary_choice)
        if (idx < 0).any():
            raise SolverError("strategy undefined on some state")
        return model.choice_start[:-1] + idx

    def dump(self, model: ExplicitModel) -> str:
        """Text rows `state decoration TAB chosen action`, Player-2 section separate."""
        lines = ["# strategy v1"]
        for s in range(model.num_states):
            if self.choice[s] >= 0:
                lines.append(f"{model.state_name[s]}\t{self.action_name(model, s)}")
        lines.append("@adversary")
        for s in range(model.num_states):
            if self.adversary_choice[s] >= 0:
                lines.append(f"{model.state_name[s]}\t{self.action_name(model, s)}")
        return "\n".join(lines) + "\n"


def parse_strategy_dump(text: str) -> tuple[dict[str, str], dict[str, str]]:
    """Parse a strategy dump into (player-1 rows, player-2 rows) keyed by state decoration."""
    p1: dict[str, str] = {}
    p2: dict[str, str] = {}
    current = p1
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        if line.strip() == "@adversary":
            current = p2
            continue
        if "\t" not in line:
            raise SolverError(f"malformed strategy row: {line!r}")
        name, action = line.rsplit("\t", 1)
        current[name] = action
    return p1, p2


@dataclass
class ValueResult:
    values: np.ndarray
    strategy: Strategy
    iterations: int
    residual: float

    def at_initial(self, model: ExplicitModel) -> float:
        return float(self.values[model.initial])


def _prepare(model: ExplicitModel) -> tuple[np.ndarray, np.ndarray]:
    players = np.unique(model.player)
    if not set(players.tolist()) <= {1, 2}:
        raise SolverError(f"unassigned players: player ids {players.tolist()} (expected 1/2)")
    if not model.targets_absorbing():
        raise SolverError("non-absorbing targets: make goal/bad states absorbing before solving")
    frozen = model.goal | model.bad
    minimizing = model.player == 2
    return frozen, minimizing


def solve_pg(
    model: ExplicitModel,
    query: Query = Query(),
    tol: float = 1e-6,
    max_iterations: int = 10**6,
    engine: str = "auto",
    sweep: str = "gauss-seidel",
) -> ValueResult:
    """Fixed point of the max/min Bellman operator, from below, Gauss-Seidel by default."""
    if tol <= 0:
        raise SolverError(f"tolerance must be positive, got {tol}")
    frozen, minimizing = _prepare(model)
    values = np.zeros(model.num_states, dtype=np.float64)
    values[model.goal] = 1.0

    cs = model.choice_start
    ts = model.trans_start
    tgt = model.trans_target
    prob = model.trans_prob

    if sweep == "gauss-seidel":
        step = _gs_step(engine)
        iterations = 0
        residual = 0.0
        while iterations < max_iterations:
            iterations += 1
            residual = step(cs, ts, tgt, prob, minimizing, frozen, values)
            if residual < tol:
                break
        else:
            raise SolverError(
                f"no convergence within {max_iterations} sweeps (residual {residual:.3e}); "
                "tighten tol or raise the iteration cap"
            )
    elif sweep == "jacobi":
        iterations = 0
        residual = 0.0
        while iterations < max_iterations:
            iterations += 1
            choice_vals = np.add.reduceat(prob * values[tgt], ts[:-1])
            new = np.where(
                minimizing,
                np.minimum.reduceat(choice_vals, cs[:-1]),
                np.maximum.reduceat(choice_vals, cs[:-1]),
            )
            new = np.where(frozen, values, new)
            residual = float(np.max(np.abs(new - values))) if len(new) else 0.0
            values = new
            if residual < tol:
                break
        else:
            raise SolverError(
                f"no convergence within {max_iterations} sweeps (residual {residual:.3e}); "
                "tighten tol or raise the iteration cap"
            )
    else:
        raise SolverError(f"unknown sweep mode {sweep!r}")

    strategy = _extract_strategy(model, values, minimizing, frozen)
    return ValueResult(values=values, strategy=strategy, iterations=iterations, residual=residual)


def _gs_step(engine: str):
    from . import _kernels

    if engine == "auto":
        engine = "numba" if _kernels.HAVE_NUMBA else "python"
    if engine == "numba":
        if not _kernels.HAVE_NUMBA:
            raise SolverError("numba engine requested but numba is not importable")
        return _kernels.gauss_seidel_sweep
    if engine == "python":
        return _kernels.gauss_seidel_sweep_py
    raise SolverError(f"unknown engine {engine!r}")


def _extract_strategy(
    model: ExplicitModel, values: np.ndarray, minimizing: np.ndarray, frozen: np.ndarray
) -> Strategy:
    cs = model.choice_start
    widths = np.diff(cs)
    choice_vals = np.add.reduceat(model.trans_prob * values[model.trans_target], model.trans_start[:-1])
    ext = np.where(
        minimizing,
        np.minimum.reduceat(choice_vals, cs[:-1]),
        np.maximum.reduceat(choice_vals, cs[:-1]),
    )
    # first index attaining the extremum, per state
    idx_in_row = np.arange(model.num_choices, dtype=np.int64) - np.repeat(cs[:-1], widths)
    hit = choice_vals == np.repeat(ext, widths)
    cand = np.where(hit, idx_in_row, model.num_choices)
    first = np.minimum.reduceat(cand, cs[:-1])
    first = np.where(frozen, 0, first)  # terminal states keep their single `done` action
    p1 = (model.player == 1)
    choice = np.where(p1, first, -1).astype(np.int64)
    adversary = np.where(~p1, first, -1).astype(np.int64)
    return Strategy(choice=choice, adversary_choice=adversary)


def solve_mdp(model: ExplicitModel, query: Query = Query(), tol: float = 1e-6, **kwargs) -> ValueResult:
    """solve_pg specialized to models without Player-2 states."""
    if (model.player == 2).any():
        raise SolverError("solve_mdp requires a model without Player-2 states")
    return solve_pg(model, query, tol, **kwargs)


def evaluate_mc(model: ExplicitModel, query: Query = Query(), tol: float = 1e-6, **kwargs) -> ValueResult:
    """Reach-avoid probabilities of a Markov chain (exactly one action per state)."""
    if (np.diff(model.choice_start) != 1).any():
        raise SolverError("evaluate_mc requires exactly one action per state")
    return solve_mdp(model, query, tol, **kwargs)


def strategy_combinations(model: ExplicitModel) -> int:
    widths = np.diff(model.choice_start)
    total = 1
    for w in widths.tolist():
        total *= w
        if total > 10**18:
            return total
    return total


def exact_chain_value(model: ExplicitModel, chosen: np.ndarray) -> float:
    """Exact reach-avoid value at the initial state of the chain induced by `chosen`.

    `chosen` holds one absolute choice id per state. Uses graph reachability
    plus a dense linear solve, which is exact up to the linear algebra and
    independent of the value-iteration path.
    """
    n = model.num_states
    succ: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for s in range(n):
        c = int(chosen[s])
        lo, hi = int(model.trans_start[c]), int(model.trans_start[c + 1])
        succ[s] = [(int(t), float(p)) for t, p in zip(model.trans_target[lo:hi], model.trans_prob[lo:hi])]
    goal = model.goal
    bad = model.bad & ~model.goal
    # backward reachability to goal, not passing through absorbing bad states
    pred: list[list[int]] = [[] for _ in range(n)]
    for s in range(n):
        if goal[s] or bad[s]:
            continue
        for t, _ in succ[s]:
            pred[t].append(s)
    can_reach = np.zeros(n, dtype=bool)
    stack = list(np.flatnonzero(goal))
    can_reach[goal] = True
    while stack:
        t = stack.pop()
        for s in pred[t]:
            if not can_reach[s]:
                can_reach[s] = True
                stack.append(s)
    transient = can_reach & ~goal
    if not transient[model.initial] and not goal[model.initial]:
        return 0.0
    idx = np.flatnonzero(transient)
    pos = {int(s): k for k, s in enumerate(idx)}
    m = len(idx)
    A = np.eye(m)
    b = np.zeros(m)
    for k, s in enumerate(idx.tolist()):
        for t, p in succ[s]:
            if goal[t]:
                b[k] += p
            elif t in pos:
                A[k, pos[t]] -= p
    x = np.linalg.solve(A, b)
    if goal[model.initial]:
        return 1.0
    return float(x[pos[int(model.initial)]])


def enumerate_optimal(model: ExplicitModel, query: Query = Query(), limit: int = 10**6) -> float:
    """Ground-truth game value by exhausting memoryless deterministic strategy pairs.

    Enumerates every Player-1 assignment against every Player-2 assignment and
    evaluates each induced chain exactly; returns max over Player 1 of the
    minimum over Player 2. Refuses instances with more than `limit` pairs.
    """
    frozen, _ = _prepare(model)
    combos = strategy_combinations(model)
    if combos > limit:
        raise SolverError(f"instance too large: {combos} strategy combinations exceed the limit {limit}")
    cs = model.choice_start
    widths = np.diff(cs)
    p1_vars = [s for s in range(model.num_states) if model.player[s] == 1 and widths[s] > 1]
    p2_vars = [s for s in range(model.num_states) if model.player[s] == 2 and widths[s] > 1]
    base = cs[:-1].copy()

    best = -1.0
    for p1_pick in itertools.product(*(range(int(widths[s])) for s in p1_vars)):
        chosen = base.copy()
        for s, k in zip(p1_vars, p1_pick):
            chosen[s] = cs[s] + k
        worst = 2.0
        for p2_pick in itertools.product(*(range(int(widths[s])) for s in p2_vars)):
            for s, k in zip(p2_vars, p2_pick):
                chosen[s] = cs[s] + k
            v = exact_chain_value(model, chosen)
            if v < worst:
                worst = v
            if worst <= best:
                break  # this P1 assignment cannot beat the incumbent
        if worst > best:
            best = worst
    return best
