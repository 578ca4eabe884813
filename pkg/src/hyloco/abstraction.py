"""Multi-resolution level selection and state conversion.

The planner runs on three grids at once: fine cells with per-foot offsets
near the robot, pair offsets at mid range, a whole-robot lattice far away.
Which one applies is purely a function of distance from the anchor (the
robot's position when planning started).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .costs import ORIENT_COUNTS, CostStack
from .lattice import LEVEL_OFFSET_SLOTS, LatticeState

RADIUS_FINE = 2.0
RADIUS_MID = 5.0


@dataclass(frozen=True)
class LevelLayout:
    """Anchor point plus the two radii that bound the fine and mid rings."""

    anchor: tuple[float, float]
    radius_fine: float = RADIUS_FINE
    radius_mid: float = RADIUS_MID

    def level_for(self, x: float, y: float) -> int:
        d = math.hypot(x - self.anchor[0], y - self.anchor[1])
        if d <= self.radius_fine:
            return 1
        if d <= self.radius_mid:
            return 2
        return 3


def _convert_orient(orient: int, n_from: int, n_to: int) -> int:
    if n_from == n_to:
        return orient
    if n_to < n_from:
        ratio = n_from // n_to
        return int(math.floor(orient / ratio + 0.5)) % n_to
    ratio = n_to // n_from
    return (orient * ratio) % n_to


def _round_half_away(v: float) -> int:
    return int(math.floor(v + 0.5)) if v >= 0 else -int(math.floor(-v + 0.5))


def _convert_offsets(offs: tuple, level_from: int, level_to: int) -> tuple:
    slots = LEVEL_OFFSET_SLOTS[level_to]
    if slots == 0:
        return ()
    if level_from == level_to:
        return offs
    if level_from == 1 and level_to == 2:
        front = _round_half_away((offs[0] + offs[1]) / 2.0)
        rear = _round_half_away((offs[2] + offs[3]) / 2.0)
        return (front, rear)
    if level_from == 2 and level_to == 1:
        f, r = offs
        return (f, f, r, r)
    if level_from == 3:
        return (0,) * slots
    raise ValueError(f"no offset conversion from level {level_from} to {level_to}")


def convert_state(stack: CostStack, st: LatticeState, level_to: int) -> LatticeState:
    """Re-express a state on another level's grid.  Going coarser loses cell
    and orientation precision; going finer snaps to the nearest fine cell."""
    if st.level == level_to:
        return st
    x, y = stack.base_world(st.level, st.col, st.row)
    col, row = stack.maps[level_to].world_to_grid(x, y)
    orient = _convert_orient(st.orient, ORIENT_COUNTS[st.level], ORIENT_COUNTS[level_to])
    offs = _convert_offsets(st.offs, st.level, level_to)
    return LatticeState(level_to, col, row, orient, offs)


def abstract_state(stack: CostStack, st: LatticeState, level_to: int) -> LatticeState:
    if level_to < st.level:
        raise ValueError("abstract_state only moves to a coarser level")
    return convert_state(stack, st, level_to)


def refine_state(stack: CostStack, st: LatticeState, level_to: int) -> LatticeState:
    if level_to > st.level:
        raise ValueError("refine_state only moves to a finer level")
    return convert_state(stack, st, level_to)


def corridor_mask(
    stack: CostStack, coarse_states: list, level_to: int, margin_coarse_cells: int = 3
):
    """Boolean (rows, cols) mask on the finer grid covering every coarse cell
    the segment visits, dilated by the margin, for corridor re-planning."""
    import numpy as np

    fine = stack.maps[level_to]
    mask = np.zeros((fine.n_rows, fine.n_cols), dtype=bool)
    for st in coarse_states:
        coarse = stack.maps[st.level]
        half = (margin_coarse_cells + 0.5) * coarse.resolution
        cx, cy = stack.base_world(st.level, st.col, st.row)
        c0, r0 = fine.world_to_grid(cx - half, cy - half)
        c1, r1 = fine.world_to_grid(cx + half, cy + half)
        r0 = max(0, min(r0, r1))
        c0 = max(0, min(c0, c1))
        r1 = min(fine.n_rows - 1, max(r0, r1))
        c1 = min(fine.n_cols - 1, max(c0, c1))
        if r1 >= r0 and c1 >= c0:
            mask[r0 : r1 + 1, c0 : c1 + 1] = True
    return mask


def refine_segment(
    stack: CostStack,
    coarse_states: list,
    level_to: int,
    *,
    params=None,
    budget_ms: float = 10000.0,
    margin_coarse_cells: int = 3,
):
    """Re-plan a coarse path segment one level finer inside a corridor around
    it.  Returns the finer PathPlan.  Endpoints are the refined first and
    last states of the segment."""
    from . import search

    if not coarse_states:
        raise ValueError("empty segment")
    seg_level = coarse_states[0].level
    if level_to != seg_level - 1:
        raise ValueError("refinement goes exactly one level down")
    mask = corridor_mask(stack, coarse_states, level_to, margin_coarse_cells)
    start = refine_state(stack, coarse_states[0], level_to)
    goal = refine_state(stack, coarse_states[-1], level_to)
    return search.plan_states(
        stack,
        start,
        goal,
        params=params,
        budget_ms=budget_ms,
        cell_mask={level_to: mask},
    )
