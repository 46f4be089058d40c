"""Benchmark scenario families: empty rooms, cross obstacle, random obstacles,
two rooms with cameras, and long corridors.

All families start the robot in the upper-left corner heading East and place
both the goal and the opponent start in the lower-right corner, with view
range 3 unless stated otherwise.
"""

from __future__ import annotations

from collections import deque
from typing import Optional

import numpy as np

from .gridworld import Cell, Scenario, ScenarioError

VIEW_RANGE = 3


def _base(width: int, height: int, obstacles=(), cameras=(), regions=None, view_range=VIEW_RANGE) -> Scenario:
    return Scenario(
        width=width,
        height=height,
        obstacles=frozenset(obstacles),
        cameras=frozenset(cameras),
        view_range=view_range,
        robot_start=(0, 0),
        robot_start_orientation="E",
        opponent_starts=((width - 1, height - 1),),
        goal_cells=frozenset({(width - 1, height - 1)}),
        regions=regions,
    )


def sc1(n: int, view_range: int = VIEW_RANGE) -> Scenario:
    """Empty n x n room."""
    if n < 2:
        raise ScenarioError(f"sc1 needs n >= 2, got {n}")
    return _base(n, n, view_range=view_range)


def sc2(n: int) -> Scenario:
    """n x n room with a scaling cross-shaped obstacle in the center.

    The cross is the middle row plus the middle column, with a one-cell gap at
    each of the four arm ends so the perimeter stays traversable.
    """
    if n < 5 or n % 2 == 0:
        raise ScenarioError(f"sc2 needs odd n >= 5, got {n}")
    mid = n // 2
    cross = {(x, mid) for x in range(n)} | {(mid, y) for y in range(n)}
    cross -= {(0, mid), (n - 1, mid), (mid, 0), (mid, n - 1)}
    return _base(n, n, obstacles=cross)


def _free_neighbors(c: Cell, free: set[Cell]) -> list[Cell]:
    x, y = c
    return [d for d in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)) if d in free]


def _connected(start: Cell, goal: Cell, free: set[Cell]) -> bool:
    seen = {start}
    queue = deque([start])
    while queue:
        c = queue.popleft()
        if c == goal:
            return True
        for d in _free_neighbors(c, free):
            if d not in seen:
                seen.add(d)
                queue.append(d)
    return False


def sc3(seed: int, obstacles: int = 40, width: int = 25, height: int = 25, max_tries: int = 1000) -> Scenario:
    """Room with randomly placed obstacles (seeded, deterministic).

    Layouts that disconnect start from goal or isolate a free cell are
    rejected and re-sampled from the same stream.
    """
    rng = np.random.default_rng(seed)
    protected = {(0, 0), (width - 1, height - 1)}
    candidates = sorted(
        (x, y) for x in range(width) for y in range(height) if (x, y) not in protected
    )
    if obstacles > len(candidates):
        raise ScenarioError(f"cannot place {obstacles} obstacles on {len(candidates)} candidate cells")
    for _ in range(max_tries):
        picks = rng.choice(len(candidates), size=obstacles, replace=False)
        obset = {candidates[i] for i in sorted(picks.tolist())}
        free = {(x, y) for x in range(width) for y in range(height) if (x, y) not in obset}
        if any(not _free_neighbors(c, free) for c in free):
            continue
        if not _connected((0, 0), (width - 1, height - 1), free):
            continue
        return _base(width, height, obstacles=obset)
    raise ScenarioError(f"no valid random layout with {obstacles} obstacles after {max_tries} tries")


def sc4(cameras: int = 0) -> Scenario:
    """Two 10-cell-high rooms joined by a single doorway in the dividing wall.

    With cameras, the doorway surroundings on both sides (the blind spot)
    become visible from everywhere.
    """
    width, height = 20, 10
    wall_x, door_y = 10, 5
    wall = {(wall_x, y) for y in range(height) if y != door_y}
    camera_cells: set[Cell] = set()
    if cameras:
        if cameras != 2:
            raise ScenarioError(f"sc4 supports 0 or 2 cameras, got {cameras}")
        for x in range(wall_x - 3, wall_x + 4):
            for y in range(door_y - 3, door_y + 4):
                if 0 <= x < width and 0 <= y < height and (x, y) not in wall:
                    camera_cells.add((x, y))
    return _base(width, height, obstacles=wall, cameras=camera_cells)


def sc5(length: int, band: int = 4, view_range: int = VIEW_RANGE) -> Scenario:
    """4-wide corridor of the given length, with horizontal region bands.

    Bands of `band` rows keep the refined game small while still separating
    "opponent above" from "opponent below" whenever the seam is watched;
    band=1 tracks the exact hidden support row by row.
    """
    if length < 8:
        raise ScenarioError(f"sc5 needs length >= 8, got {length}")
    if band < 1:
        raise ScenarioError(f"sc5 band must be >= 1, got {band}")
    width = 4
    regions = tuple(
        frozenset((x, y) for x in range(width) for y in range(y0, min(y0 + band, length)))
        for y0 in range(0, length, band)
    )
    return _base(width, length, regions=regions)


def corpus() -> list[tuple[str, Scenario]]:
    """Mixed scenario set used by the property and soundness test suites."""
    return [
        ("sc1-3", sc1(3)),
        ("sc1-4", sc1(4)),
        ("sc1-5", sc1(5)),
        ("sc2-11", sc2(11)),
        ("sc3-10x10", sc3(seed=11, obstacles=12, width=10, height=10)),
        ("sc4-0cam", sc4(0)),
        ("sc4-2cam", sc4(2)),
        ("sc5-16", sc5(16)),
    ]
