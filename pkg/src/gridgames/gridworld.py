"""Grid scenarios, exact line of sight, visibility tables, and movement graphs.

Coordinates are (x, y) with the origin in the top-left corner and y growing
downward. A cell (x, y) occupies the unit square [x, x+1] x [y, y+1]; sight
lines run between cell centers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Optional

Cell = tuple[int, int]

ORIENTATIONS = ("N", "E", "S", "W")
DIR_VECTOR: Mapping[str, Cell] = {"N": (0, -1), "E": (1, 0), "S": (0, 1), "W": (-1, 0)}
TURN_LEFT = {"N": "W", "W": "S", "S": "E", "E": "N"}
TURN_RIGHT = {"N": "E", "E": "S", "S": "W", "W": "N"}

ROBOT_MOVES = ("forward", "turn_left", "turn_right")
OPPONENT_MOVES = ("N", "E", "S", "W")


class ScenarioError(ValueError):
    """A scenario document violates the schema or one of its invariants."""

    module = "gridworld"


class GraphError(ValueError):
    """A movement graph cannot be built (e.g. a position would deadlock)."""

    module = "gridworld"


def _as_cell(value, what: str) -> Cell:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    ):
        raise ScenarioError(f"{what}: expected a cell [x, y] of integers, got {value!r}")
    return (value[0], value[1])


@dataclass(frozen=True)
class Scenario:
    """Declarative description of a grid world.

    `cameras` is the set of cells that are visible from every robot position
    (the footprint observed by fixed sensors). `regions`, when present, is a
    partition of the free cells used by region-based refinement.
    """

    width: int
    height: int
    obstacles: frozenset[Cell]
    cameras: frozenset[Cell]
    view_range: int
    robot_start: Cell
    robot_start_orientation: str
    opponent_starts: tuple[Cell, ...]
    goal_cells: frozenset[Cell]
    regions: Optional[tuple[frozenset[Cell], ...]] = None

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ScenarioError(f"grid dimensions must be positive, got {self.width}x{self.height}")
        if self.view_range < 0:
            raise ScenarioError(f"view_range must be >= 0, got {self.view_range}")
        if self.robot_start_orientation not in ORIENTATIONS:
            raise ScenarioError(
                f"robot_start_orientation must be one of {ORIENTATIONS}, got {self.robot_start_orientation!r}"
            )
        for what, cells in (
            ("obstacle", self.obstacles),
            ("camera", self.cameras),
            ("goal", self.goal_cells),
            ("opponent start", self.opponent_starts),
            ("robot start", (self.robot_start,)),
        ):
            for c in cells:
                if not self.in_grid(c):
                    raise ScenarioError(f"{what} cell {c} lies outside the {self.width}x{self.height} grid")
        if not self.opponent_starts:
            raise ScenarioError("at least one opponent start cell is required")
        if not self.goal_cells:
            raise ScenarioError("at least one goal cell is required")
        if self.robot_start in self.obstacles:
            raise ScenarioError(f"start-on-obstacle: robot start {self.robot_start} is an obstacle")
        for c in self.opponent_starts:
            if c in self.obstacles:
                raise ScenarioError(f"start-on-obstacle: opponent start {c} is an obstacle")
        for c in self.goal_cells:
            if c in self.obstacles:
                raise ScenarioError(f"goal cell {c} is an obstacle")
        for c in self.cameras:
            if c in self.obstacles:
                raise ScenarioError(f"camera cell {c} is an obstacle")
        if self.regions is not None:
            self._check_regions()

    def _check_regions(self) -> None:
        seen: set[Cell] = set()
        for i, block in enumerate(self.regions):
            if not block:
                raise ScenarioError(f"region block {i} is empty")
            for c in block:
                if not self.in_grid(c) or c in self.obstacles:
                    raise ScenarioError(f"region block {i} contains non-free cell {c}")
                if c in seen:
                    raise ScenarioError(f"region blocks overlap at cell {c}")
                seen.add(c)
        missing = self.free_cells() - seen
        if missing:
            raise ScenarioError(f"region blocks do not cover free cells, e.g. {sorted(missing)[0]}")

    def in_grid(self, c: Cell) -> bool:
        return 0 <= c[0] < self.width and 0 <= c[1] < self.height

    def is_free(self, c: Cell) -> bool:
        return self.in_grid(c) and c not in self.obstacles

    def free_cells(self) -> frozenset[Cell]:
        return frozenset(
            (x, y) for x in range(self.width) for y in range(self.height) if (x, y) not in self.obstacles
        )

    def grid_diameter(self) -> int:
        return self.width + self.height

    def to_document(self) -> dict:
        """Scenario as a plain JSON-compatible document (inverse of parse_scenario)."""
        doc = {
            "width": self.width,
            "height": self.height,
            "obstacles": sorted(list(c) for c in self.obstacles),
            "cameras": sorted(list(c) for c in self.cameras),
            "view_range": self.view_range,
            "robot_start": list(self.robot_start),
            "robot_start_orientation": self.robot_start_orientation,
            "opponent_starts": [list(c) for c in self.opponent_starts],
            "goal_cells": sorted(list(c) for c in self.goal_cells),
        }
        if self.regions is not None:
            doc["regions"] = [sorted(list(c) for c in block) for block in self.regions]
        return doc


_SCENARIO_KEYS = {
    "width",
    "height",
    "obstacles",
    "cameras",
    "view_range",
    "robot_start",
    "robot_start_orientation",
    "opponent_starts",
    "goal_cells",
    "regions",
}


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document (JSON, cells as [x, y])."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    unknown = set(doc) - _SCENARIO_KEYS
    if unknown:
        raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")
    for key in ("width", "height", "view_range", "robot_start", "opponent_starts", "goal_cells"):
        if key not in doc:
            raise ScenarioError(f"missing required scenario field {key!r}")
    for key in ("width", "height", "view_range"):
        if not isinstance(doc[key], int) or isinstance(doc[key], bool):
            raise ScenarioError(f"field {key!r} must be an integer, got {doc[key]!r}")
    if not isinstance(doc["opponent_starts"], list) or not doc["opponent_starts"]:
        raise ScenarioError("opponent_starts must be a non-empty array of cells")
    if not isinstance(doc["goal_cells"], list) or not doc["goal_cells"]:
        raise ScenarioError("goal_cells must be a non-empty array of cells")
    regions = None
    if doc.get("regions") is not None:
        if not isinstance(doc["regions"], list):
            raise ScenarioError("regions must be an array of cell arrays")
        regions = tuple(
            frozenset(_as_cell(c, f"regions[{i}]") for c in block) for i, block in enumerate(doc["regions"])
        )
    return Scenario(
        width=doc["width"],
        height=doc["height"],
        obstacles=frozenset(_as_cell(c, "obstacles") for c in doc.get("obstacles", [])),
        cameras=frozenset(_as_cell(c, "cameras") for c in doc.get("cameras", [])),
        view_range=doc["view_range"],
        robot_start=_as_cell(doc["robot_start"], "robot_start"),
        robot_start_orientation=doc.get("robot_start_orientation", "E"),
        opponent_starts=tuple(_as_cell(c, "opponent_starts") for c in doc["opponent_starts"]),
        goal_cells=frozenset(_as_cell(c, "goal_cells") for c in doc["goal_cells"]),
        regions=regions,
    )


def _segment_crosses_interior(ax: Fraction, ay: Fraction, bx: Fraction, by: Fraction, cell: Cell) -> bool:
    """True iff the open segment a->b passes through the open interior of `cell`.

    Exact rational slab clipping: touching a corner or sliding along an edge
    yields a degenerate parameter interval and does not count as crossing.
    """
    t_lo, t_hi = Fraction(0), Fraction(1)
    for start, delta, lo in ((ax, bx - ax, cell[0]), (ay, by - ay, cell[1])):
        lo_f, hi_f = Fraction(lo), Fraction(lo + 1)
        if delta == 0:
            if not (lo_f < start < hi_f):
                return False
            continue
        ta = (lo_f - start) / delta
        tb = (hi_f - start) / delta
        if ta > tb:
            ta, tb = tb, ta
        if ta > t_lo:
            t_lo = ta
        if tb < t_hi:
            t_hi = tb
    return t_lo < t_hi


def line_of_sight(scenario: Scenario, a: Cell, b: Cell) -> bool:
    """True iff no obstacle interior lies on the open segment between the centers of a and b."""
    if not scenario.in_grid(a) or not scenario.in_grid(b):
        raise ScenarioError(f"line_of_sight endpoints must lie in the grid, got {a}, {b}")
    if a == b:
        return True
    ax, ay = Fraction(2 * a[0] + 1, 2), Fraction(2 * a[1] + 1, 2)
    bx, by = Fraction(2 * b[0] + 1, 2), Fraction(2 * b[1] + 1, 2)
    x_lo, x_hi = min(a[0], b[0]), max(a[0], b[0])
    y_lo, y_hi = min(a[1], b[1]), max(a[1], b[1])
    for ox in range(x_lo, x_hi + 1):
        for oy in range(y_lo, y_hi + 1):
            if (ox, oy) in scenario.obstacles and _segment_crosses_interior(ax, ay, bx, by, (ox, oy)):
                return False
    return True


@dataclass(frozen=True)
class Position:
    """A node of a movement graph; orientation is present exactly for the robot."""

    agent: int
    cell: Cell
    orientation: Optional[str] = None

    def __post_init__(self) -> None:
        if (self.agent == 0) != (self.orientation is not None):
            raise GraphError(f"orientation must be present exactly for agent 0, got {self}")


class WorldGraph:
    """Movement graph of one agent: positions, enabled movements, and their effects."""

    def __init__(
        self,
        agent: int,
        positions: Iterable[Position],
        initial: Position,
        movements: tuple[str, ...],
        effects: Mapping[tuple[Position, str], Position],
    ):
        self.agent = agent
        self.positions = tuple(positions)
        self.initial = initial
        self.movements = movements
        self.effects = dict(effects)
        self.index = {p: i for i, p in enumerate(self.positions)}
        if initial not in self.index:
            raise GraphError(f"initial position {initial} is not a graph position")
        # id-indexed successor table, movement order matching `movements`
        self._succ: list[tuple[tuple[str, int], ...]] = []
        for p in self.positions:
            row = []
            for m in movements:
                q = self.effects.get((p, m))
                if q is not None:
                    if q not in self.index:
                        raise GraphError(f"effect of {m} at {p} leaves the position set: {q}")
                    row.append((m, self.index[q]))
            if not row:
                raise GraphError(f"position {p} has no enabled movement")
            self._succ.append(tuple(row))

    def enabled(self, pos: Position) -> tuple[str, ...]:
        return tuple(m for m, _ in self._succ[self.index[pos]])

    def successor(self, pos: Position, movement: str) -> Position:
        return self.effects[(pos, movement)]

    def location_of(self, pos: Position) -> Cell:
        return pos.cell

    def enabled_by_id(self, pos_id: int) -> tuple[tuple[str, int], ...]:
        return self._succ[pos_id]

    def __len__(self) -> int:
        return len(self.positions)


def build_robot_graph(scenario: Scenario) -> WorldGraph:
    """Robot graph: free cells x 4 orientations; forward when facing a free cell, turns always."""
    free = sorted(scenario.free_cells())
    positions = [Position(0, c, d) for c in free for d in ORIENTATIONS]
    effects: dict[tuple[Position, str], Position] = {}
    for p in positions:
        x, y = p.cell
        dx, dy = DIR_VECTOR[p.orientation]
        ahead = (x + dx, y + dy)
        if scenario.is_free(ahead):
            effects[(p, "forward")] = Position(0, ahead, p.orientation)
        effects[(p, "turn_left")] = Position(0, p.cell, TURN_LEFT[p.orientation])
        effects[(p, "turn_right")] = Position(0, p.cell, TURN_RIGHT[p.orientation])
    initial = Position(0, scenario.robot_start, scenario.robot_start_orientation)
    return WorldGraph(0, positions, initial, ROBOT_MOVES, effects)


def build_opponent_graph(scenario: Scenario, i: int) -> WorldGraph:
    """Opponent graph: free cells, one-cell moves in the four wind directions."""
    if i < 1 or i > len(scenario.opponent_starts):
        raise GraphError(f"opponent index {i} out of range 1..{len(scenario.opponent_starts)}")
    free = sorted(scenario.free_cells())
    positions = [Position(i, c) for c in free]
    effects: dict[tuple[Position, str], Position] = {}
    for p in positions:
        x, y = p.cell
        any_move = False
        for m in OPPONENT_MOVES:
            dx, dy = DIR_VECTOR[m]
            target = (x + dx, y + dy)
            if scenario.is_free(target):
                effects[(p, m)] = Position(i, target)
                any_move = True
        if not any_move:
            raise GraphError(f"isolated-cell: free cell {p.cell} has no enabled movement for agent {i}")
    initial = Position(i, scenario.opponent_starts[i - 1])
    return WorldGraph(i, positions, initial, OPPONENT_MOVES, effects)


def visible_cells(scenario: Scenario, v0: Position | Cell) -> frozenset[Cell]:
    """Cells observable from a robot position: sight window plus cameras plus own cell."""
    cell = v0.cell if isinstance(v0, Position) else v0
    if not scenario.is_free(cell):
        raise ScenarioError(f"robot cell {cell} is not a free grid cell")
    r = scenario.view_range
    out = {cell}
    out.update(scenario.cameras)
    for x in range(max(0, cell[0] - r), min(scenario.width, cell[0] + r + 1)):
        for y in range(max(0, cell[1] - r), min(scenario.height, cell[1] + r + 1)):
            if line_of_sight(scenario, cell, (x, y)):
                out.add((x, y))
    return frozenset(out)


class VisibilityTable:
    """Precomputed lookup from robot cell to its visible cell set.

    Visibility depends only on the robot's cell, never its orientation, so the
    table is keyed by cell. `invisible_free` lists the free cells outside the
    visible set, sorted, which is the hot lookup during abstraction.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        free = sorted(scenario.free_cells())
        self.visible: dict[Cell, frozenset[Cell]] = {c: visible_cells(scenario, c) for c in free}
        self.invisible_free: dict[Cell, tuple[Cell, ...]] = {
            c: tuple(d for d in free if d not in self.visible[c]) for c in free
        }

    def sees(self, robot: Position | Cell, target: Cell) -> bool:
        cell = robot.cell if isinstance(robot, Position) else robot
        return target in self.visible[cell]

    def of(self, robot: Position | Cell) -> frozenset[Cell]:
        cell = robot.cell if isinstance(robot, Position) else robot
        return self.visible[cell]
