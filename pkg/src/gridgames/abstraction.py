"""Game abstraction of world POMDPs, with history-based refinements.

Player-1 states lump world states that yield the same observation; in the
intermediate selector states Player 2 picks the concrete opponent cell the
chosen action is executed at, and the outcome distribution is lifted back to
Player-1 states. Refinements restrict those picks using observation history:

* ``one-step``: while the opponent has not moved since it was last seen, its
  exact cell is remembered (the belief is still a point mass).
* ``regions``: after that, a set of region flags over-approximates where the
  opponent may be. Flags spread along opponent moves whose endpoints are both
  outside the currently visible area and are dropped once every cell of a
  block is observed empty, so regions connected only through watched cells
  never leak. With singleton regions this tracks the exact invisible support.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gridworld import Cell, Scenario, VisibilityTable, WorldGraph
from .model import ExplicitModel, ModelBuilder, ModelError
from .solver import Strategy, ValueResult
from .worldmodel import TICK, OpponentPolicy, WorldModelMeta, _aggregated_moves

MODES = ("none", "one-step", "regions")


class AbstractionError(ValueError):
    module = "abstraction"


@dataclass(frozen=True)
class RegionPartition:
    """Disjoint non-empty blocks of free cells covering the whole free space."""

    blocks: tuple[frozenset[Cell], ...]

    def validate(self, scenario: Scenario) -> None:
        seen: set[Cell] = set()
        for i, block in enumerate(self.blocks):
            if not block:
                raise AbstractionError(f"region block {i} is empty")
            for c in block:
                if not scenario.is_free(c):
                    raise AbstractionError(f"region block {i} contains non-free cell {c}")
                if c in seen:
                    raise AbstractionError(f"region blocks overlap at cell {c}")
                seen.add(c)
        missing = scenario.free_cells() - seen
        if missing:
            raise AbstractionError(f"region blocks do not cover free cells, e.g. {sorted(missing)[0]}")

    def adjacency(self, graph: WorldGraph) -> dict[int, set[int]]:
        """Block pairs connected by a single opponent move (including self loops)."""
        block_of = {}
        for i, b in enumerate(self.blocks):
            for c in b:
                block_of[c] = i
        adj: dict[int, set[int]] = {i: set() for i in range(len(self.blocks))}
        for p in graph.positions:
            for m in graph.enabled(p):
                q = graph.successor(p, m)
                adj[block_of[p.cell]].add(block_of[q.cell])
        return adj

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "RegionPartition":
        if scenario.regions is None:
            raise AbstractionError("scenario carries no region partition")
        part = cls(scenario.regions)
        part.validate(scenario)
        return part

    @classmethod
    def singletons(cls, scenario: Scenario) -> "RegionPartition":
        return cls(tuple(frozenset((c,)) for c in sorted(scenario.free_cells())))

    @classmethod
    def rows(cls, scenario: Scenario) -> "RegionPartition":
        blocks = []
        for y in range(scenario.height):
            row = frozenset((x, y) for x in range(scenario.width) if scenario.is_free((x, y)))
            if row:
                blocks.append(row)
        return cls(tuple(blocks))


class _Abstraction:
    """Shared successor logic for the game builder and lifted-strategy automaton.

    Decorations:
      ("full", r, c, j)   opponent visible at free-cell id c
      ("seen", r, c, j)   opponent invisible but known to sit at c
      ("far", r, j)       opponent anywhere invisible
      ("flags", r, fs, j) opponent somewhere in flagged blocks fs, invisible
    with r a robot position id and j the turn counter.
    """

    def __init__(
        self,
        scenario: Scenario,
        robot: WorldGraph,
        opponent: WorldGraph,
        policy: OpponentPolicy,
        vis: VisibilityTable,
        mode: str,
        partition: Optional[RegionPartition] = None,
    ):
        if mode not in MODES:
            raise AbstractionError(f"unknown refinement mode {mode!r}")
        if mode == "regions":
            if partition is None:
                raise AbstractionError("region refinement needs a region partition")
            partition.validate(scenario)
        self.scenario = scenario
        self.robot = robot
        self.opponent = opponent
        self.policy = policy
        self.vis = vis
        self.mode = mode
        self.partition = partition

        self.free: tuple[Cell, ...] = tuple(p.cell for p in opponent.positions)
        self.cell_id = {c: i for i, c in enumerate(self.free)}
        self.r_cell: list[int] = [self.cell_id[p.cell] for p in robot.positions]
        n_cells = len(self.free)
        self.vis_sets: list[frozenset[int]] = [
            frozenset(self.cell_id[d] for d in vis.visible[c] if d in self.cell_id) for c in self.free
        ]
        self.invisible = [
            tuple(k for k in range(n_cells) if k not in self.vis_sets[i]) for i in range(n_cells)
        ]
        self.at_name: list[str] = [f"at({x},{y})" for x, y in self.free]
        self.goal_ids = frozenset(self.cell_id[c] for c in scenario.goal_cells)

        if policy.robot_independent:
            self._moves = [
                _aggregated_moves(opponent, policy, robot.initial, p) for p in opponent.positions
            ]
        else:
            self._moves = None
        if mode == "regions":
            self.block_of: list[int] = [0] * n_cells
            self.block_cells: list[tuple[int, ...]] = []
            for b, block in enumerate(partition.blocks):
                ids = tuple(sorted(self.cell_id[c] for c in block))
                self.block_cells.append(ids)
                for k in ids:
                    self.block_of[k] = b
        self._flag_member_cache: dict[tuple, tuple[int, ...]] = {}
        self._prune_cache: dict[tuple, frozenset[int]] = {}
        self._image_cache: dict[tuple, frozenset[int]] = {}

    # -- helpers ---------------------------------------------------------

    def moves_of(self, c: int, r: int) -> tuple[tuple[int, float], ...]:
        if self._moves is not None:
            return self._moves[c]
        return _aggregated_moves(
            self.opponent, self.policy, self.robot.positions[r], self.opponent.positions[c]
        )

    def sees(self, r: int, c: int) -> bool:
        return c in self.vis_sets[self.r_cell[r]]

    def initial_decoration(self) -> tuple:
        r = self.robot.index[self.robot.initial]
        c = self.cell_id[self.opponent.initial.cell]
        if self.sees(r, c):
            return ("full", r, c, 0)
        if self.mode == "none":
            return ("far", r, 0)
        return ("seen", r, c, 0)

    def is_goal(self, dec: tuple) -> bool:
        return int(self.r_cell[dec[1]]) in self.goal_ids

    def is_bad(self, dec: tuple) -> bool:
        return dec[0] == "full" and int(self.r_cell[dec[1]]) == dec[2] and not self.is_goal(dec)

    def p1_actions(self, dec: tuple) -> tuple[tuple[str, Optional[int]], ...]:
        """Enabled actions with the robot successor position (None on opponent turns)."""
        if dec[-1] == 0:
            return tuple((m, succ) for m, succ in self.robot.enabled_by_id(dec[1]))
        return ((TICK, None),)

    def members(self, dec: tuple) -> tuple[int, ...]:
        """Concrete opponent cells Player 2 may pick in a selector of this class."""
        kind = dec[0]
        if kind in ("full", "seen"):
            return (dec[2],)
        r_cell = self.r_cell[dec[1]]
        if kind == "far":
            return self.invisible[r_cell]
        key = (dec[2], r_cell)
        cached = self._flag_member_cache.get(key)
        if cached is None:
            visible = self.vis_sets[r_cell]
            cached = tuple(
                sorted(k for b in dec[2] for k in self.block_cells[b] if k not in visible)
            )
            self._flag_member_cache[key] = cached
        return cached

    def _prune_flags(self, fs: frozenset[int], r: int, r2: int) -> frozenset[int]:
        """Flags surviving a robot move: blocks with a cell hidden from both positions."""
        rc, rc2 = self.r_cell[r], self.r_cell[r2]
        key = (fs, rc, rc2)
        out = self._prune_cache.get(key)
        if out is None:
            seen_a, seen_b = self.vis_sets[rc], self.vis_sets[rc2]
            out = frozenset(
                b
                for b in fs
                if any(k not in seen_a and k not in seen_b for k in self.block_cells[b])
            )
            self._prune_cache[key] = out
        return out

    def _move_image(self, fs: frozenset[int], r: int) -> frozenset[int]:
        """Flags after one unseen opponent move out of the flagged, hidden cells."""
        rc = self.r_cell[r]
        key = (fs, rc, r if self._moves is None else -1)
        out = self._image_cache.get(key)
        if out is None:
            visible = self.vis_sets[rc]
            blocks = set()
            block_of = self.block_of
            for b in fs:
                for u in self.block_cells[b]:
                    if u in visible:
                        continue
                    for w, _p in self.moves_of(u, r):
                        if w not in visible:
                            blocks.add(block_of[w])
            out = frozenset(blocks)
            self._image_cache[key] = out
        return out

    def _init_flags(self, c: int, r: int) -> frozenset[int]:
        """Flags right after losing sight through an opponent move away from cell c."""
        visible = self.vis_sets[self.r_cell[r]]
        blocks = frozenset(self.block_of[w] for w, _p in self.moves_of(c, r) if w not in visible)
        if not blocks:
            raise AbstractionError("inconsistent far observation: every successor is visible")
        return blocks

    def hidden_successor(self, dec: tuple, action: str, r2: Optional[int]) -> tuple:
        """Decoration after observing the far-away token.

        For robot moves r2 is the new robot position; for opponent moves the
        robot stays at dec's position. Independent of Player 2's pick, which
        keeps the lifted strategy observation-based.
        """
        kind, r = dec[0], dec[1]
        if dec[-1] == 0:
            if r2 is None:
                raise AbstractionError(f"robot move {action!r} needs the successor position")
            if kind in ("full", "seen"):
                if self.mode == "none":
                    return ("far", r2, 1)
                return ("seen", r2, dec[2], 1)
            if kind == "far":
                return ("far", r2, 1)
            return ("flags", r2, self._prune_flags(dec[2], r, r2), 1)
        if kind in ("full", "seen"):
            if self.mode == "regions":
                return ("flags", r, self._init_flags(dec[2], r), 0)
            return ("far", r, 0)
        if kind == "far":
            return ("far", r, 0)
        return ("flags", r, self._move_image(dec[2], r), 0)

    def decoration_name(self, dec: tuple) -> str:
        kind, r = dec[0], dec[1]
        pos = self.robot.positions[r]
        head = f"r=({pos.cell[0]},{pos.cell[1]},{pos.orientation})"
        j = dec[-1]
        if kind == "full":
            c = self.free[dec[2]]
            return f"{head} o=({c[0]},{c[1]}) j={j}"
        if kind == "seen":
            c = self.free[dec[2]]
            return f"{head} seen=({c[0]},{c[1]}) j={j}"
        if kind == "far":
            return f"{head} o=far j={j}"
        flags = ",".join(str(b) for b in sorted(dec[2]))
        return f"{head} flags={{{flags}}} j={j}"


@dataclass
class AbstractionMeta:
    """Abstraction provenance: per-state decorations and the shared successor logic."""

    mode: str
    scenario: Scenario
    context: _Abstraction = field(repr=False)
    decoration: list = field(repr=False)   # per state: decoration tuple for P1, (base, action) for selectors
    p1_index: dict = field(repr=False)     # decoration -> state id


def _unpack_world(pomdp: ExplicitModel) -> WorldModelMeta:
    meta = pomdp.meta
    if not isinstance(meta, WorldModelMeta):
        raise AbstractionError("needs a world POMDP built by worldmodel (provenance missing)")
    if meta.num_opponents != 1:
        raise AbstractionError(f"abstraction supports exactly one opponent, got {meta.num_opponents}")
    if pomdp.obs_id is None:
        raise AbstractionError("needs a POMDP with observations attached")
    return meta


def build_game_direct(
    scenario: Scenario,
    robot: WorldGraph,
    opponent: WorldGraph,
    policy: OpponentPolicy,
    vis: VisibilityTable,
    mode: str = "none",
    partition: Optional[RegionPartition] = None,
) -> ExplicitModel:
    """Build the abstract game straight from the scenario, without the world POMDP.

    Far-away selector states let Player 2 pick any hidden free cell, so this is
    a sound (possibly slightly stronger) adversary compared to grouping only
    reachable world states.
    """
    ctx = _Abstraction(scenario, robot, opponent, policy, vis, mode, partition)
    builder = ModelBuilder("pg")
    index: dict[tuple, int] = {}
    decorations: list = []
    queue: deque[tuple] = deque()

    def intern(dec: tuple) -> int:
        sid = index.get(dec)
        if sid is None:
            goal = ctx.is_goal(dec)
            bad = ctx.is_bad(dec)
            sid = builder.add_state(ctx.decoration_name(dec), player=1, goal=goal, bad=bad)
            index[dec] = sid
            decorations.append(dec)
            queue.append(dec)
        return sid

    init_id = intern(ctx.initial_decoration())
    at_name = ctx.at_name
    add_choice = builder.add_choice
    while queue:
        dec = queue.popleft()
        sid = index[dec]
        if ctx.is_goal(dec) or ctx.is_bad(dec):
            add_choice(sid, "done", ((sid, 1.0),))
            continue
        base_name = ctx.decoration_name(dec)
        actions = ctx.p1_actions(dec)
        sel_ids = []
        for action, r2 in actions:
            sel = builder.add_state(f"{base_name} | act={action}", player=2)
            decorations.append((dec, action, r2))
            sel_ids.append(sel)
        for (action, _r2), sel in zip(actions, sel_ids):
            add_choice(sid, action, ((sel, 1.0),))
        members = ctx.members(dec)
        if dec[-1] == 0:
            for (action, r2), sel in zip(actions, sel_ids):
                vis_set = ctx.vis_sets[ctx.r_cell[r2]]
                hidden_id = None
                for c in members:
                    if c in vis_set:
                        target = intern(("full", r2, c, 1))
                    else:
                        if hidden_id is None:
                            hidden_id = intern(ctx.hidden_successor(dec, action, r2))
                        target = hidden_id
                    add_choice(sel, at_name[c], ((target, 1.0),))
        else:
            r = dec[1]
            vis_set = ctx.vis_sets[ctx.r_cell[r]]
            action, sel = actions[0][0], sel_ids[0]
            hidden_id = None
            moves_of = ctx.moves_of
            for c in members:
                agg: dict[int, float] = {}
                for w, p in moves_of(c, r):
                    if w in vis_set:
                        t = intern(("full", r, w, 0))
                    else:
                        if hidden_id is None:
                            hidden_id = intern(ctx.hidden_successor(dec, action, None))
                        t = hidden_id
                    agg[t] = agg.get(t, 0.0) + p
                add_choice(sel, at_name[c], sorted(agg.items()))

    meta = AbstractionMeta(
        mode=mode, scenario=scenario, context=ctx, decoration=decorations, p1_index=index
    )
    return builder.finish(init_id, meta=meta)


def _game_from_pomdp(pomdp: ExplicitModel, vis: VisibilityTable, mode: str, partition=None) -> ExplicitModel:
    meta = _unpack_world(pomdp)
    return build_game_direct(
        meta.scenario,
        meta.robot_graph,
        meta.opponent_graphs[0],
        meta.policies[0],
        vis,
        mode=mode,
        partition=partition,
    )


def refine_one_step(pomdp: ExplicitModel, vis: VisibilityTable) -> ExplicitModel:
    """Game where the opponent's cell stays known until its next own move."""
    return _game_from_pomdp(pomdp, vis, "one-step")


def refine_regions(pomdp: ExplicitModel, vis: VisibilityTable, partition: RegionPartition) -> ExplicitModel:
    """Game tracking region flags for the hidden opponent (on top of one-step memory)."""
    return _game_from_pomdp(pomdp, vis, "regions")


def build_abstract_pg(pomdp: ExplicitModel) -> ExplicitModel:
    """Observation-class abstraction of a world POMDP (the unrefined game).

    Player-1 states are observation classes of the reachable world states;
    selector states let Player 2 pick the concrete member state. Labels:
    a class is bad iff some member is bad, goal iff the shared robot cell is
    a goal location (all members agree by construction).
    """
    meta = _unpack_world(pomdp)
    n = pomdp.num_states
    obs = pomdp.obs_id
    classes: dict[int, list[int]] = {}
    for s in range(n):
        classes.setdefault(int(obs[s]), []).append(s)
    for members in classes.values():
        first = pomdp.actions(members[0])
        for s in members[1:]:
            if pomdp.actions(s) != first:
                raise AbstractionError(
                    f"observation class mixes action sets: {pomdp.state_name[members[0]]} vs {pomdp.state_name[s]}"
                )

    builder = ModelBuilder("pg")
    index: dict[int, int] = {}
    queue: deque[int] = deque()
    free = meta.free_cells

    def intern(o: int) -> int:
        sid = index.get(o)
        if sid is None:
            members = classes[o]
            goal = bool(pomdp.goal[members].all())
            bad = bool(pomdp.bad[members].any())
            sid = builder.add_state(pomdp.obs_name[o], player=1, goal=goal, bad=bad)
            index[o] = sid
            queue.append(o)
        return sid

    init_id = intern(int(obs[pomdp.initial]))
    while queue:
        o = queue.popleft()
        sid = index[o]
        members = classes[o]
        goal = bool(pomdp.goal[members].all())
        bad = bool(pomdp.bad[members].any())
        if goal or bad:
            builder.add_choice(sid, "done", ((sid, 1.0),))
            continue
        actions = pomdp.actions(members[0])
        sel_ids = []
        for a in actions:
            sel = builder.add_state(f"{pomdp.obs_name[o]} | act={a}", player=2)
            sel_ids.append(sel)
        for a, sel in zip(actions, sel_ids):
            builder.add_choice(sid, a, ((sel, 1.0),))
        for k, (a, sel) in enumerate(zip(actions, sel_ids)):
            for s in members:
                agg: dict[int, float] = {}
                c = int(pomdp.choice_start[s]) + k
                for t, p in pomdp.choice_transitions(c):
                    target_class = intern(int(obs[t]))
                    agg[target_class] = agg.get(target_class, 0.0) + p
                cell = free[int(meta.opp_cell[s, 0])]
                builder.add_choice(sel, f"at({cell[0]},{cell[1]})", sorted(agg.items()))

    return builder.finish(init_id, meta=None)


class ObservationStrategy:
    """Finite-memory observation-based strategy obtained by lifting a game strategy.

    Memory states are the game's Player-1 states; the update reads only the
    action taken and the next observation, so the induced POMDP strategy is
    observation-based.
    """

    def __init__(self, pg: ExplicitModel, strategy: Strategy):
        meta = pg.meta
        if not isinstance(meta, AbstractionMeta):
            raise AbstractionError("lift_strategy needs a game built with abstraction provenance")
        self.pg = pg
        self.meta = meta
        self.ctx = meta.context
        self.strategy = strategy
        self.mode = meta.mode
        self._outputs: dict[int, str] = {}
        for dec, sid in meta.p1_index.items():
            if strategy.choice[sid] < 0:
                raise AbstractionError(f"strategy undefined on Player-1 state {pg.state_name[sid]}")
            self._outputs[sid] = strategy.action_name(pg, sid)

    @property
    def memory_states(self) -> list[int]:
        return sorted(self.meta.p1_index.values())

    def initial_memory(self) -> int:
        return self.pg.initial

    def memory_name(self, m: int) -> str:
        return self.pg.state_name[m]

    def output(self, m: int) -> str:
        return self._outputs[m]

    def update(self, m: int, action: str, obs: tuple) -> int:
        """Next memory for observation (robot position id, opponent cell id or None, turn)."""
        if self.pg.goal[m] or self.pg.bad[m]:
            return m
        dec = self.meta.decoration[m]
        r2, c2, _j2 = obs
        if c2 is not None:
            nxt = ("full", r2, c2, _j2)
        else:
            nxt = self.ctx.hidden_successor(dec, action, r2 if dec[-1] == 0 else None)
        sid = self.meta.p1_index.get(nxt)
        if sid is None:
            raise AbstractionError(
                f"memory update undefined for memory {self.pg.state_name[m]!r}, "
                f"action {action!r}, observation {obs!r}"
            )
        return sid


def lift_strategy(pg: ExplicitModel, strategy: Strategy) -> ObservationStrategy:
    """Lift a memoryless game strategy to a finite-memory POMDP strategy."""
    return ObservationStrategy(pg, strategy)


def collision_hotspots(pg: ExplicitModel, result: ValueResult) -> list[tuple[Cell, float]]:
    """Rank collision locations by probability mass absorbed there under optimal play.

    Computes the occupation measure of the chain induced by the extracted
    strategy pair and groups the inflow into bad states by the robot cell at
    which the collision happens; good candidate spots for extra sensors.
    """
    from scipy.sparse import csr_matrix

    meta = pg.meta
    if not isinstance(meta, AbstractionMeta):
        raise AbstractionError("collision_hotspots needs a game built with abstraction provenance")
    chosen = result.strategy.induced_choices(pg)
    mc = pg.take_choices(chosen)
    n = mc.num_states
    P = csr_matrix(
        (mc.trans_prob, mc.trans_target, mc.trans_start),
        shape=(n, n),
    )
    absorbing = mc.goal | mc.bad
    mu = np.zeros(n)
    mu[mc.initial] = 1.0
    into_bad = np.zeros(n)
    for _ in range(200000):
        flow = mu @ P
        into_bad += np.where(mc.bad, flow, 0.0)
        mu = np.where(absorbing, 0.0, flow)
        total = mu.sum()
        if total < 1e-14:
            break
    ranked: dict[Cell, float] = {}
    ctx = meta.context
    for s in np.flatnonzero(into_bad > 1e-12).tolist():
        dec = meta.decoration[s]
        if isinstance(dec, tuple) and dec and dec[0] in ("full", "seen", "far", "flags"):
            cell = ctx.free[int(ctx.r_cell[dec[1]])]
        else:
            continue
        ranked[cell] = ranked.get(cell, 0.0) + float(into_bad[s])
    return sorted(ranked.items(), key=lambda kv: (-kv[1], kv[0]))
