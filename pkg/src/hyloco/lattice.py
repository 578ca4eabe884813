"""Lattice state space shared by the planner and the abstraction layer.

A state is (level, base cell, orientation index, longitudinal foot offsets).
Offsets are stored as integer multiples of OFFSET_QUANTUM: four per-foot
values at level 1, one per foot pair at level 2, none at level 3.  States are
NamedTuples so heap tie-breaking falls back to plain lexicographic order.
"""
from __future__ import annotations

import math
from typing import NamedTuple

from .costs import ORIENT_COUNTS, CostStack

OFFSET_QUANTUM = 0.05
# offsets live in [-0.55, +0.40] m; +0.40 is the last quantum where the
# extended leg still reaches the ground at nominal base height, and the
# rearward end is reachable only with the base crouched
OFF_MIN_Q = -11
OFF_MAX_Q = 8

# maximum rearward common shift (base-shift chains bottom out here)
COMMON_SHIFT_MIN_Q = -11

LEVEL_OFFSET_SLOTS = {1: 4, 2: 2, 3: 0}


class LatticeState(NamedTuple):
    level: int
    col: int
    row: int
    orient: int
    offs: tuple

    def offsets4_q(self) -> tuple:
        if self.level == 1:
            return self.offs
        if self.level == 2:
            f, r = self.offs
            return (f, f, r, r)
        return (0, 0, 0, 0)

    def offsets4_m(self) -> tuple:
        return tuple(q * OFFSET_QUANTUM for q in self.offsets4_q())

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "col": self.col,
            "row": self.row,
            "orient": self.orient,
            "offsets": [q * OFFSET_QUANTUM for q in self.offs],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LatticeState":
        offs = tuple(int(round(v / OFFSET_QUANTUM)) for v in doc.get("offsets", []))
        return cls(int(doc["level"]), int(doc["col"]), int(doc["row"]), int(doc["orient"]), offs)


class Maneuver(NamedTuple):
    kind: str
    params: dict
    cost: float

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "cost": self.cost}

    @classmethod
    def from_dict(cls, doc: dict) -> "Maneuver":
        return cls(doc["kind"], dict(doc.get("params", {})), float(doc["cost"]))


def neutral_state(stack: CostStack, level: int, col: int, row: int, orient: int) -> LatticeState:
    return LatticeState(level, col, row, orient, (0,) * LEVEL_OFFSET_SLOTS[level])


def state_from_pose(stack: CostStack, level: int, x: float, y: float, yaw: float) -> LatticeState:
    m = stack.maps[level]
    col, row = m.world_to_grid(x, y)
    n = ORIENT_COUNTS[level]
    orient = int(math.floor(yaw / (2.0 * math.pi) * n + 0.5)) % n
    return neutral_state(stack, level, col, row, orient)


def state_pose(stack: CostStack, st: LatticeState) -> tuple[float, float, float]:
    x, y = stack.base_world(st.level, st.col, st.row)
    return x, y, stack.yaw_of(st.level, st.orient)


def valid_offsets(level: int, offs: tuple) -> bool:
    """A stance is representable iff every offset is in range and all but at
    most two feet (one pair at level 2) sit at a common rearward shift."""
    for q in offs:
        if q < OFF_MIN_Q or q > OFF_MAX_Q:
            return False
    if level == 1:
        limit = 2
    elif level == 2:
        limit = 1
    else:
        return len(offs) == 0
    for u in range(0, COMMON_SHIFT_MIN_Q - 1, -1):
        if sum(1 for q in offs if q != u) <= limit:
            return True
    return False


def heading(stack: CostStack, level: int, orient: int) -> tuple[float, float]:
    yaw = stack.yaw_of(level, orient)
    return math.cos(yaw), math.sin(yaw)


def shifted_cell(
    stack: CostStack, level: int, col: int, row: int, orient: int, distance: float
) -> tuple[int, int]:
    """Cell nearest to the base after moving `distance` along the heading.
    Off-axis headings quantize to the nearest cell."""
    hx, hy = heading(stack, level, orient)
    x, y = stack.base_world(level, col, row)
    return stack.maps[level].world_to_grid(x + distance * hx, y + distance * hy)


def transition(stack: CostStack, st: LatticeState, man: Maneuver) -> LatticeState:
    """Pure state arithmetic for a maneuver at the state's own level; level
    conversion (params['to_level']) is applied afterwards by the abstraction
    layer.  Raises on kinds that do not exist at the state's level."""
    kind = man.kind
    p = man.params
    level, col, row, orient, offs = st

    if kind == "drive":
        return st._replace(col=col + int(p["dc"]), row=row + int(p["dr"]))
    if kind == "turn":
        n = ORIENT_COUNTS[level]
        return st._replace(orient=(orient + int(p["dir"])) % n)
    if kind == "step" and level == 1:
        f = int(p["foot"])
        new = list(offs)
        new[f] += int(p["travel_q"])
        return st._replace(offs=tuple(new))
    if kind == "shift_foot" and level == 1:
        f = int(p["foot"])
        new = list(offs)
        new[f] += 1
        return st._replace(offs=tuple(new))
    if kind == "foot_to_neutral" and level == 1:
        f = int(p["foot"])
        new = list(offs)
        new[f] = 0
        return st._replace(offs=tuple(new))
    if kind == "step_pair" and level == 2:
        pair = int(p["pair"])
        new = list(offs)
        new[pair] += int(p["travel_q"])
        return st._replace(offs=tuple(new))
    if kind == "shift_pair" and level == 2:
        pair = int(p["pair"])
        new = list(offs)
        new[pair] += 1
        return st._replace(offs=tuple(new))
    if kind == "pair_to_neutral" and level == 2:
        pair = int(p["pair"])
        new = list(offs)
        new[pair] = 0
        return st._replace(offs=tuple(new))
    if kind == "shift_base" and level in (1, 2):
        ncol, nrow = shifted_cell(stack, level, col, row, orient, OFFSET_QUANTUM)
        new = tuple(q - 1 for q in offs)
        return st._replace(col=ncol, row=nrow, offs=new)
    if kind == "step_robot" and level == 3:
        dist = int(p["travel_cells"]) * stack.resolution(level)
        ncol, nrow = shifted_cell(stack, level, col, row, orient, dist)
        return st._replace(col=ncol, row=nrow)
    raise ValueError(f"maneuver {kind!r} is not defined at level {level}")


class PathPlan(NamedTuple):
    states: tuple
    maneuvers: tuple
    total_cost: float
    epsilon: float
    expansions: int
    time_ms: float

    def to_dict(self) -> dict:
        return {
            "states": [s.to_dict() for s in self.states],
            "maneuvers": [m.to_dict() for m in self.maneuvers],
            "total_cost": self.total_cost,
            "epsilon": self.epsilon,
            "expansions": self.expansions,
            "time_ms": self.time_ms,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PathPlan":
        return cls(
            tuple(LatticeState.from_dict(s) for s in doc["states"]),
            tuple(Maneuver.from_dict(m) for m in doc["maneuvers"]),
            float(doc["total_cost"]),
            float(doc["epsilon"]),
            int(doc["expansions"]),
            float(doc["time_ms"]),
        )

    def kinds(self) -> list[str]:
        return [m.kind for m in self.maneuvers]
