"""World MDP / POMDP construction from movement graphs and opponent policies.

States are tuples (robot position, opponent cells..., turn counter). Turn 0
is the robot's move; turn i >= 1 is opponent i's move via the single action
`tick`. Only states reachable from the initial configuration are built.
"""

from __future__ import annotations

from array import array
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gridworld import Cell, Position, Scenario, VisibilityTable, WorldGraph
from .model import Distribution, ExplicitModel, ModelBuilder, ModelError

TICK = "tick"


class OpponentPolicy:
    """Randomized movement rule of one opponent, possibly depending on the robot's position.

    `robot_independent` lets builders cache distributions per opponent cell.
    """

    robot_independent = False

    def move_distribution(self, robot: Position, opponent: Position) -> Distribution:
        raise NotImplementedError


class UniformPolicy(OpponentPolicy):
    """Move to every enabled successor cell with equal probability."""

    robot_independent = True

    def __init__(self, graph: WorldGraph):
        self.graph = graph

    def move_distribution(self, robot: Position, opponent: Position) -> Distribution:
        moves = self.graph.enabled(opponent)
        p = 1.0 / len(moves)
        return Distribution(tuple((m, p) for m in moves))


@dataclass
class WorldModelMeta:
    """World provenance attached to explicit models built by this module."""

    scenario: Scenario
    robot_graph: WorldGraph
    opponent_graphs: tuple[WorldGraph, ...]
    policies: tuple[OpponentPolicy, ...]
    free_cells: tuple[Cell, ...]
    robot_pos: np.ndarray   # int32 per state: robot position id
    opp_cell: np.ndarray    # int32 per state per opponent: free-cell index
    turn: np.ndarray        # int8 per state
    vis: Optional[VisibilityTable] = field(default=None, repr=False)

    @property
    def num_opponents(self) -> int:
        return self.opp_cell.shape[1]

    def state_tuple(self, s: int) -> tuple:
        return (int(self.robot_pos[s]), tuple(int(c) for c in self.opp_cell[s]), int(self.turn[s]))


def _state_name(robot: Position, opp_cells: Sequence[Cell], j: int) -> str:
    ox = " ".join(f"o{i + 1}=({c[0]},{c[1]})" for i, c in enumerate(opp_cells))
    return f"r=({robot.cell[0]},{robot.cell[1]},{robot.orientation}) {ox} j={j}"


def _aggregated_moves(
    graph: WorldGraph, policy: OpponentPolicy, robot: Position, opponent: Position
) -> tuple[tuple[int, float], ...]:
    """Successor cell-id distribution of one opponent move, with policy support checked."""
    dist = policy.move_distribution(robot, opponent)
    enabled = set(graph.enabled(opponent))
    agg: dict[int, float] = {}
    for move, p in dist.items():
        if move not in enabled:
            raise ModelError(
                f"policy support outside enabled movements: {move!r} at {opponent.cell} "
                f"(enabled: {sorted(enabled)})"
            )
        succ = graph.index[graph.successor(opponent, move)]
        agg[succ] = agg.get(succ, 0.0) + p
    return tuple(sorted(agg.items()))


def build_world_mdp(graphs: Sequence[WorldGraph], policies: Sequence[OpponentPolicy]) -> ExplicitModel:
    """Induced world MDP over (robot, opponents, turn) with alternating moves."""
    robot = graphs[0]
    opponents = tuple(graphs[1:])
    if len(policies) != len(opponents):
        raise ModelError(f"need one policy per opponent, got {len(policies)} for {len(opponents)}")
    if not opponents:
        raise ModelError("at least one opponent graph is required")
    n = len(opponents)
    scenario = None  # labels are attached separately by label_states

    # opponent graphs share the free-cell position indexing
    free = tuple(p.cell for p in opponents[0].positions)
    cached_moves: list[Optional[list[tuple[tuple[int, float], ...]]]] = []
    for g, pol in zip(opponents, policies):
        if pol.robot_independent:
            cached_moves.append(
                [_aggregated_moves(g, pol, robot.initial, p) for p in g.positions]
            )
        else:
            cached_moves.append(None)

    builder = ModelBuilder("mdp")
    index: dict[tuple, int] = {}
    queue: deque[tuple] = deque()

    def intern_state(key: tuple) -> int:
        sid = index.get(key)
        if sid is None:
            r_id, opp_ids, j = key
            name = _state_name(robot.positions[r_id], [free[c] for c in opp_ids], j)
            sid = builder.add_state(name)
            index[key] = sid
            queue.append(key)
        return sid

    r_pos = array("i")
    o_cells = array("i")
    turns = array("b")
    init_key = (
        robot.index[robot.initial],
        tuple(g.index[g.initial] for g in opponents),
        0,
    )
    intern_state(init_key)
    while queue:
        key = queue.popleft()
        sid = index[key]
        r_id, opp_ids, j = key
        r_pos.append(r_id)
        for c in opp_ids:
            o_cells.append(c)
        turns.append(j)
        if j == 0:
            for move, succ in robot.enabled_by_id(r_id):
                t = intern_state((succ, opp_ids, 1 if n >= 1 else 0))
                builder.add_choice(sid, move, ((t, 1.0),))
        else:
            g = opponents[j - 1]
            if cached_moves[j - 1] is not None:
                agg = cached_moves[j - 1][opp_ids[j - 1]]
            else:
                agg = _aggregated_moves(
                    g, policies[j - 1], robot.positions[r_id], g.positions[opp_ids[j - 1]]
                )
            nj = (j + 1) % (n + 1)
            out = []
            for succ, p in agg:
                new_opp = opp_ids[: j - 1] + (succ,) + opp_ids[j:]
                out.append((intern_state((r_id, new_opp, nj)), p))
            builder.add_choice(sid, TICK, out)

    meta = WorldModelMeta(
        scenario=scenario,
        robot_graph=robot,
        opponent_graphs=opponents,
        policies=tuple(policies),
        free_cells=free,
        robot_pos=np.frombuffer(r_pos, dtype=np.int32).copy(),
        opp_cell=np.frombuffer(o_cells, dtype=np.int32).copy().reshape(-1, n),
        turn=np.frombuffer(turns, dtype=np.int8).copy(),
    )
    return builder.finish(index[init_key], meta=meta)


def label_states(model: ExplicitModel, scenario: Scenario) -> ExplicitModel:
    """Mark collision states as bad and goal-location states as goal (ties resolve to goal)."""
    meta = model.meta
    if not isinstance(meta, WorldModelMeta):
        raise ModelError("label_states needs a model built by build_world_mdp")
    robot_cells = np.array(
        [meta.robot_graph.positions[i].cell for i in range(len(meta.robot_graph.positions))], dtype=np.int32
    )
    state_cells = robot_cells[meta.robot_pos]
    goal_mask = np.zeros(model.num_states, dtype=bool)
    for gc in scenario.goal_cells:
        goal_mask |= (state_cells[:, 0] == gc[0]) & (state_cells[:, 1] == gc[1])
    free_arr = np.array(meta.free_cells, dtype=np.int32)
    opp_xy = free_arr[meta.opp_cell]          # (N, n, 2)
    collide = (opp_xy == state_cells[:, None, :]).all(axis=2).any(axis=1)
    bad_mask = collide & ~goal_mask
    labeled = model.with_labels(goal_mask, bad_mask)
    labeled.meta = WorldModelMeta(
        scenario=scenario,
        robot_graph=meta.robot_graph,
        opponent_graphs=meta.opponent_graphs,
        policies=meta.policies,
        free_cells=meta.free_cells,
        robot_pos=meta.robot_pos,
        opp_cell=meta.opp_cell,
        turn=meta.turn,
        vis=meta.vis,
    )
    return labeled


def attach_observations(mdp: ExplicitModel, vis: VisibilityTable) -> ExplicitModel:
    """World POMDP: the opponent's cell is observed iff visible, else the far-away token.

    The robot's own position and the turn counter are always part of the
    observation; that makes equal observations imply equal action sets.
    """
    meta = mdp.meta
    if not isinstance(meta, WorldModelMeta):
        raise ModelError("attach_observations needs a model built by build_world_mdp")
    if meta.num_opponents != 1:
        raise ModelError(f"observations require exactly one opponent, got {meta.num_opponents}")
    robot = meta.robot_graph
    n_states = mdp.num_states

    # visibility of opponent cell from robot cell, as a positions x cells matrix
    cell_index = {c: k for k, c in enumerate(meta.free_cells)}
    vis_matrix = np.zeros((len(robot.positions), len(meta.free_cells)), dtype=bool)
    for p_id, pos in enumerate(robot.positions):
        visible = vis.visible[pos.cell]
        for c in visible:
            k = cell_index.get(c)
            if k is not None:
                vis_matrix[p_id, k] = True

    opp = meta.opp_cell[:, 0]
    sees = vis_matrix[meta.robot_pos, opp]

    obs_key: dict[tuple, int] = {}
    obs_names: list[str] = []
    obs_id = np.empty(n_states, dtype=np.int64)
    free = meta.free_cells
    for s in range(n_states):
        r_id = int(meta.robot_pos[s])
        j = int(meta.turn[s])
        if sees[s]:
            key = (r_id, int(opp[s]), j)
        else:
            key = (r_id, -1, j)
        oid = obs_key.get(key)
        if oid is None:
            oid = len(obs_names)
            obs_key[key] = oid
            pos = robot.positions[r_id]
            seen = f"({free[key[1]][0]},{free[key[1]][1]})" if key[1] >= 0 else "far"
            obs_names.append(f"r=({pos.cell[0]},{pos.cell[1]},{pos.orientation}) o={seen} j={j}")
        obs_id[s] = oid

    meta_with_vis = WorldModelMeta(
        scenario=meta.scenario,
        robot_graph=meta.robot_graph,
        opponent_graphs=meta.opponent_graphs,
        policies=meta.policies,
        free_cells=meta.free_cells,
        robot_pos=meta.robot_pos,
        opp_cell=meta.opp_cell,
        turn=meta.turn,
        vis=vis,
    )
    pomdp = ExplicitModel(
        kind="pomdp",
        initial=mdp.initial,
        player=mdp.player,
        choice_start=mdp.choice_start,
        choice_action=mdp.choice_action,
        trans_start=mdp.trans_start,
        trans_target=mdp.trans_target,
        trans_prob=mdp.trans_prob,
        goal=mdp.goal,
        bad=mdp.bad,
        state_name=mdp.state_name,
        obs_id=obs_id,
        obs_name=obs_names,
        meta=meta_with_vis,
    )
    pomdp.validate()
    return pomdp
