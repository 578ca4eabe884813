"""Anytime lattice planner over the hybrid drive/step state space.

The search runs weighted A* repeatedly on a decreasing inflation schedule,
reusing g-values, the open list, and locally inconsistent states between
iterations, so an early coarse solution is available quickly and is refined
toward the optimum while budget remains.

Maneuver costs are quantized to multiples of 2**-20 so that two paths built
from the same multiset of maneuvers accumulate bit-identical totals.
"""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import robot
from .abstraction import LevelLayout, convert_state
from .costs import ORIENT_COUNTS, CostStack
from .lattice import (
    COMMON_SHIFT_MIN_Q,
    OFF_MAX_Q,
    OFF_MIN_Q,
    OFFSET_QUANTUM,
    LatticeState,
    Maneuver,
    PathPlan,
    heading,
    neutral_state,
    shifted_cell,
    state_from_pose,
    transition,
    valid_offsets,
)

COST_QUANTUM_INV = 1 << 20

# successor lists kept for cross-round re-expansion, bounded for memory
_SUCC_CACHE_MAX = 400_000

# worst-case ratio of 8-connected grid distance to straight-line distance
OCTILE = math.cos(math.pi / 8) + (math.sqrt(2.0) - 1.0) * math.sin(math.pi / 8)

DRIVE_DIRS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))

DRIVING_KINDS = frozenset({"drive"})
DRIVING_TURNING_KINDS = frozenset({"drive", "turn"})


class PlanningError(Exception):
    """Planning request is malformed or starts from an untraversable stance."""

    def __init__(self, message: str, expansions: int = 0):
        super().__init__(message)
        self.expansions = expansions


class NoPathError(PlanningError):
    """The reachable state space was exhausted without finding the goal."""


class BudgetExhaustedError(PlanningError):
    """Wall-clock budget ran out before any solution was found."""


class PlanCancelledError(PlanningError):
    """Cancellation was requested before any solution was found."""


@dataclass(frozen=True)
class SearchParams:
    eps_schedule: tuple = (3.0, 2.0, 1.5, 1.0)
    step_penalty: float = 2.0
    shift_penalty: float = 0.25
    turn_inertia: float = 0.35
    step_land_min: float = 0.10
    step_land_max: float = 0.55
    side_partner_limit_q: int = 5
    h_scale: float = 5.0
    h_slack: float = 0.15
    jump_min_cells: int = 2
    jump_max_cells: int = 8


@dataclass
class PlanResult:
    plans: list
    expansions: int
    time_ms: float
    budget_exhausted: bool = False
    cancelled: bool = False

    @property
    def final(self) -> PathPlan:
        return self.plans[-1]


def quantize_cost(c: float) -> float:
    return round(c * COST_QUANTUM_INV) / COST_QUANTUM_INV


def state_pose_cost(stack: CostStack, st: LatticeState) -> float:
    return stack.pose_cost_q(st.level, st.col, st.row, st.orient, st.offsets4_q())


def turn_arc_equiv(level: int, params: SearchParams) -> float:
    """Meters-equivalent travel charged for one orientation increment."""
    return 2.0 * math.pi / ORIENT_COUNTS[level] * params.turn_inertia


# --------------------------------------------------------------------------
# feasibility predicates
# --------------------------------------------------------------------------


class _FastGrid:
    """Plain-python mirrors of one level's grids for scalar hot loops."""

    __slots__ = (
        "foot_rows", "height_rows", "near_rows", "ox", "oy", "res", "ncols", "nrows"
    )

    def __init__(self, stack: CostStack, level: int):
        from scipy import ndimage

        m = stack.maps[level]
        costs_arr = stack.foot[level].costs
        self.foot_rows = costs_arr.tolist()
        self.height_rows = m.cells.tolist()
        # cells within a step's reach of un-drivable ground; wheels outside
        # this halo can skip every lift/chord feasibility scan
        blocked = ~np.isfinite(costs_arr)
        if blocked.any():
            reach = int(math.ceil(0.5 / m.resolution)) + 1
            near = ndimage.binary_dilation(
                blocked, structure=np.ones((3, 3), dtype=bool), iterations=reach
            )
        else:
            near = blocked
        self.near_rows = near.tolist()
        self.ox, self.oy = m.origin
        self.res = m.resolution
        self.ncols = m.n_cols
        self.nrows = m.n_rows

    def foot_cost(self, x: float, y: float) -> float:
        col = round((x - self.ox) / self.res)
        row = round((y - self.oy) / self.res)
        if 0 <= col < self.ncols and 0 <= row < self.nrows:
            return self.foot_rows[row][col]
        return math.inf

    def near_blocked(self, x: float, y: float) -> bool:
        col = round((x - self.ox) / self.res)
        row = round((y - self.oy) / self.res)
        if 0 <= col < self.ncols and 0 <= row < self.nrows:
            return self.near_rows[row][col]
        return True

    def height(self, x: float, y: float) -> float:
        """Terrain height; NaN when unknown, +inf when out of bounds."""
        col = round((x - self.ox) / self.res)
        row = round((y - self.oy) / self.res)
        if 0 <= col < self.ncols and 0 <= row < self.nrows:
            return self.height_rows[row][col]
        return math.inf


def _fast(stack: CostStack, level: int) -> _FastGrid:
    cache = getattr(stack, "_fast_grids", None)
    if cache is None:
        cache = {}
        stack._fast_grids = cache
    g = cache.get(level)
    if g is None:
        g = _FastGrid(stack, level)
        cache[level] = g
    return g


def _chord_crest(fg: _FastGrid, p0, p1) -> float:
    """Highest terrain strictly between two points, sampled at half-cell
    pitch.  Unknown or out-of-bounds samples return +inf (blocks the chord);
    -inf when the chord has no interior samples."""
    dx = p1[0] - p0[0]
    dy = p1[1] - p0[1]
    dist = math.hypot(dx, dy)
    n = int(math.ceil(dist / (fg.res * 0.5)))
    crest = -math.inf
    for k in range(1, n):
        t = k / n
        z = fg.height(p0[0] + t * dx, p0[1] + t * dy)
        if z != z or z == math.inf:
            return math.inf
        if z > crest:
            crest = z
    return crest


def _rolling_clear(fg: _FastGrid, p0, p1) -> bool:
    """Every cell under a wheel rolling from p0 to p1 must be drivable."""
    dx = p1[0] - p0[0]
    dy = p1[1] - p0[1]
    dist = math.hypot(dx, dy)
    n = max(1, int(math.ceil(dist / (fg.res * 0.5))))
    for k in range(n + 1):
        t = k / n
        if fg.foot_cost(p0[0] + t * dx, p0[1] + t * dy) == math.inf:
            return False
    return True


def _foot_world(stack: CostStack, st: LatticeState) -> list:
    bx, by = stack.base_world(st.level, st.col, st.row)
    yaw = stack.yaw_of(st.level, st.orient)
    return robot.foot_points(bx, by, yaw, st.offsets4_m())


def _one_foot(bx: float, by: float, cos_y: float, sin_y: float, f: int, off_m: float):
    """World position of one foot; same arithmetic as robot.foot_points so a
    single-foot target matches the full-stance computation bit for bit."""
    lx = robot._NEUTRAL_XY[f][0] + off_m
    ly = robot._NEUTRAL_XY[f][1]
    return bx + cos_y * lx - sin_y * ly, by + sin_y * lx + cos_y * ly


def _scan_foot_steps(
    fg: _FastGrid,
    fx: float,
    fy: float,
    hx: float,
    hy: float,
    t_lo: int,
    t_hi: int,
    kpt: int,
    step_max: float,
) -> list:
    """One forward sweep shared by every candidate landing of a lifted wheel.

    Samples the heading ray at half-cell pitch (kpt samples per travel
    quantum) and returns (travel_q, crosses_blocked) for each travel in
    [t_lo, t_hi] whose landing cell is drivable, whose landing height is
    within the step limit of lift-off, and whose chord interior never rises
    above the lift limit.  crosses_blocked reports an un-drivable sample
    strictly before the landing.  The crest only grows along the ray, so the
    sweep stops at the first sample above the lift limit."""
    h_from = fg.height(fx, fy)
    if h_from != h_from or h_from == math.inf:
        return []
    lift_cap = h_from + step_max + 1e-9
    half = fg.res * 0.5
    out = []
    first_block = 0
    crest = -math.inf
    t_lo_k = kpt * t_lo
    for k in range(1, kpt * t_hi + 1):
        d = k * half
        sx = fx + d * hx
        sy = fy + d * hy
        z = fg.height(sx, sy)
        fc = fg.foot_cost(sx, sy)
        if k >= t_lo_k and not k % kpt:
            # landing checks run before this sample joins the chord prefix
            if (
                z == z
                and z != math.inf
                and abs(z - h_from) <= step_max + 1e-9
                and fc != math.inf
            ):
                out.append((k // kpt, 0 < first_block < k))
        if first_block == 0 and fc == math.inf:
            first_block = k
        if z != z or z == math.inf:
            crest = math.inf
        elif z > crest:
            crest = z
        if crest > lift_cap:
            break
    return out


def step_feasible(
    stack: CostStack,
    st: LatticeState,
    foot_index: int,
    travel_q: int,
    params: SearchParams,
    *,
    require_blocked: bool = True,
) -> bool:
    """All conditions for lifting one foot (or one pair slot at level 2) and
    placing it travel_q quanta further along the heading:

    - rolling the wheel to its landing point is blocked somewhere on the
      chord, so the lift actually crosses an un-drivable band (skipped when
      require_blocked is False, used by goal-directed replays)
    - the landing distance is inside [step_land_min, step_land_max]
    - the landing cell is drivable and its height is within the step limit
    - terrain between lift-off and landing never rises above the lift limit
    - the successor offsets are representable and the same-side partner is
      not already extended beyond the stability limit
    """
    level = st.level
    travel = travel_q * OFFSET_QUANTUM
    if travel < params.step_land_min - 1e-9 or travel > params.step_land_max + 1e-9:
        return False
    offs = st.offs
    if level == 1:
        if abs(offs[robot.SAME_SIDE_PARTNER[foot_index]]) > params.side_partner_limit_q:
            return False
        feet_idx = (foot_index,)
    elif level == 2:
        if abs(offs[1 - foot_index]) > params.side_partner_limit_q:
            return False
        feet_idx = (0, 1) if foot_index == 0 else (2, 3)
    else:
        return False
    new_offs = list(offs)
    new_offs[foot_index] += travel_q
    new_offs = tuple(new_offs)
    if not valid_offsets(level, new_offs):
        return False

    hx, hy = heading(stack, level, st.orient)
    fg = _fast(stack, level)
    feet_now = _foot_world(stack, st)
    kpt = int(round(OFFSET_QUANTUM / (fg.res * 0.5)))
    step_max = stack.params.step_max
    crossed = False
    for fi in feet_idx:
        hits = _scan_foot_steps(
            fg, feet_now[fi][0], feet_now[fi][1], hx, hy, travel_q, travel_q, kpt, step_max
        )
        if not hits:
            return False
        crossed = crossed or hits[0][1]
    if require_blocked and not crossed:
        return False
    return math.isfinite(state_pose_cost(stack, st._replace(offs=new_offs)))


# --------------------------------------------------------------------------
# successor generation
# --------------------------------------------------------------------------


def successors(
    stack: CostStack,
    st: LatticeState,
    params: SearchParams,
    *,
    layout: LevelLayout | None = None,
    allowed: frozenset | None = None,
    cell_mask: dict | None = None,
) -> list:
    """All feasible (successor, maneuver) pairs.  Costs are already quantized.
    When a layout is given, successors whose position falls in a different
    level ring are converted to that level (the maneuver records to_level)."""
    out = []
    level = st.level
    res = stack.resolution(level)
    pose0 = state_pose_cost(stack, st)
    if not math.isfinite(pose0):
        return out

    def ok(kind: str) -> bool:
        return allowed is None or kind in allowed

    def push(kind: str, p: dict, succ: LatticeState, cost: float) -> None:
        if cell_mask is not None:
            m = cell_mask.get(succ.level)
            if m is not None:
                if not (0 <= succ.row < m.shape[0] and 0 <= succ.col < m.shape[1]):
                    return
                if not m[succ.row, succ.col]:
                    return
        if layout is not None:
            x, y = stack.base_world(succ.level, succ.col, succ.row)
            target = layout.level_for(x, y)
            if target != succ.level:
                conv = convert_state(stack, succ, target)
                if not valid_offsets(target, conv.offs):
                    return
                if not math.isfinite(state_pose_cost(stack, conv)):
                    return
                p = dict(p)
                p["to_level"] = target
                succ = conv
        out.append((succ, Maneuver(kind, p, quantize_cost(cost))))

    # drive: roll to one of the 8 neighbor cells, stance unchanged
    if ok("drive"):
        for dc, dr in DRIVE_DIRS:
            succ = st._replace(col=st.col + dc, row=st.row + dr)
            pose1 = state_pose_cost(stack, succ)
            if math.isfinite(pose1):
                dist = res * math.hypot(dc, dr)
                push("drive", {"dc": dc, "dr": dr}, succ, dist * 0.5 * (pose0 + pose1))

    # turn in place: one orientation increment, neutral stance only
    if ok("turn") and all(q == 0 for q in st.offs):
        arc = turn_arc_equiv(level, params)
        n = ORIENT_COUNTS[level]
        for d in (1, -1):
            succ = st._replace(orient=(st.orient + d) % n)
            pose1 = state_pose_cost(stack, succ)
            if math.isfinite(pose1):
                push("turn", {"dir": d}, succ, arc * 0.5 * (pose0 + pose1))

    if level == 1:
        fg = _fast(stack, 1)
        bx, by = stack.base_world(1, st.col, st.row)
        hx, hy = heading(stack, 1, st.orient)
        feet_now = robot.foot_points(bx, by, stack.yaw_of(1, st.orient), st.offsets4_m())
        # step: lift one foot over an obstacle ahead of it
        if ok("step"):
            t_lo = int(round(params.step_land_min / OFFSET_QUANTUM))
            t_cap = int(params.step_land_max / OFFSET_QUANTUM + 1e-9)
            kpt = int(round(OFFSET_QUANTUM / (fg.res * 0.5)))
            step_max = stack.params.step_max
            for f in range(robot.N_FEET):
                fx, fy = feet_now[f]
                if not fg.near_blocked(fx, fy):
                    continue
                if abs(st.offs[robot.SAME_SIDE_PARTNER[f]]) > params.side_partner_limit_q:
                    continue
                t_hi = min(OFF_MAX_Q - st.offs[f], t_cap)
                if t_hi < t_lo:
                    continue
                for t, crossed in _scan_foot_steps(fg, fx, fy, hx, hy, t_lo, t_hi, kpt, step_max):
                    # the chord must actually cross a blocked cell
                    if not crossed:
                        continue
                    new = list(st.offs)
                    new[f] += t
                    new = tuple(new)
                    if not valid_offsets(1, new):
                        continue
                    succ = st._replace(offs=new)
                    pose1 = state_pose_cost(stack, succ)
                    if not math.isfinite(pose1):
                        continue
                    cost = params.step_penalty * 0.5 * (pose0 + pose1)
                    push("step", {"foot": f, "travel_q": t}, succ, cost)
        # shift_foot: roll one wheel a single quantum forward
        if ok("shift_foot"):
            for f in range(robot.N_FEET):
                if st.offs[f] + 1 > OFF_MAX_Q:
                    continue
                new = list(st.offs)
                new[f] += 1
                if not valid_offsets(1, tuple(new)):
                    continue
                succ = st._replace(offs=tuple(new))
                if not math.isfinite(state_pose_cost(stack, succ)):
                    continue
                target = _one_foot(bx, by, hx, hy, f, new[f] * OFFSET_QUANTUM)
                if not _rolling_clear(fg, feet_now[f], target):
                    continue
                push("shift_foot", {"foot": f}, succ, params.shift_penalty)
        # foot_to_neutral: roll an extended wheel back to its neutral offset
        # (retraction only; pulling a trailing wheel forward is a shift chain,
        # priced per quantum like every other forward motion)
        if ok("foot_to_neutral"):
            for f in range(robot.N_FEET):
                if st.offs[f] <= 0:
                    continue
                new = list(st.offs)
                new[f] = 0
                succ = st._replace(offs=tuple(new))
                if not math.isfinite(state_pose_cost(stack, succ)):
                    continue
                target = _one_foot(bx, by, hx, hy, f, 0.0)
                if not _rolling_clear(fg, feet_now[f], target):
                    continue
                push("foot_to_neutral", {"foot": f}, succ, params.shift_penalty)

    if level == 2:
        fg = _fast(stack, 2)
        bx, by = stack.base_world(2, st.col, st.row)
        hx, hy = heading(stack, 2, st.orient)
        feet_now = robot.foot_points(bx, by, stack.yaw_of(2, st.orient), st.offsets4_m())
        # step_pair: lift a front or rear pair together
        if ok("step_pair"):
            t_lo = int(round(params.step_land_min / OFFSET_QUANTUM))
            t_cap = int(params.step_land_max / OFFSET_QUANTUM + 1e-9)
            kpt = int(round(OFFSET_QUANTUM / (fg.res * 0.5)))
            step_max = stack.params.step_max
            for pair in range(2):
                fi = (0, 1) if pair == 0 else (2, 3)
                if not any(fg.near_blocked(*feet_now[i]) for i in fi):
                    continue
                if abs(st.offs[1 - pair]) > params.side_partner_limit_q:
                    continue
                t_hi = min(OFF_MAX_Q - st.offs[pair], t_cap)
                if t_hi < t_lo:
                    continue
                # both wheels must pass their own gates; one blocked chord
                # is enough to make the lift a real crossing
                merged = None
                for i in fi:
                    got = dict(
                        _scan_foot_steps(
                            fg, feet_now[i][0], feet_now[i][1], hx, hy, t_lo, t_hi, kpt, step_max
                        )
                    )
                    if merged is None:
                        merged = got
                    else:
                        merged = {
                            t: merged[t] or got[t] for t in merged.keys() & got.keys()
                        }
                    if not merged:
                        break
                if not merged:
                    continue
                for t in sorted(merged):
                    if not merged[t]:
                        continue
                    new = list(st.offs)
                    new[pair] += t
                    new = tuple(new)
                    if not valid_offsets(2, new):
                        continue
                    succ = st._replace(offs=new)
                    pose1 = state_pose_cost(stack, succ)
                    if not math.isfinite(pose1):
                        continue
                    cost = 2.0 * params.step_penalty * 0.5 * (pose0 + pose1)
                    push("step_pair", {"pair": pair, "travel_q": t}, succ, cost)
        # shift_pair / pair_to_neutral: both wheels of a pair roll together
        for pair in range(2):
            fi = (0, 1) if pair == 0 else (2, 3)
            if ok("shift_pair") and st.offs[pair] + 1 <= OFF_MAX_Q:
                new = list(st.offs)
                new[pair] += 1
                if valid_offsets(2, tuple(new)):
                    succ = st._replace(offs=tuple(new))
                    if math.isfinite(state_pose_cost(stack, succ)):
                        off_m = new[pair] * OFFSET_QUANTUM
                        if all(
                            _rolling_clear(fg, feet_now[i], _one_foot(bx, by, hx, hy, i, off_m))
                            for i in fi
                        ):
                            push("shift_pair", {"pair": pair}, succ, 2.0 * params.shift_penalty)
            if ok("pair_to_neutral") and st.offs[pair] > 0:
                new = list(st.offs)
                new[pair] = 0
                succ = st._replace(offs=tuple(new))
                if math.isfinite(state_pose_cost(stack, succ)):
                    if all(
                        _rolling_clear(fg, feet_now[i], _one_foot(bx, by, hx, hy, i, 0.0))
                        for i in fi
                    ):
                        push("pair_to_neutral", {"pair": pair}, succ, 2.0 * params.shift_penalty)

    if level in (1, 2) and ok("shift_base"):
        # shift_base: base creeps one quantum forward, wheels stay planted
        if min(st.offs) - 1 >= OFF_MIN_Q:
            new = tuple(q - 1 for q in st.offs)
            if valid_offsets(level, new):
                ncol, nrow = shifted_cell(stack, level, st.col, st.row, st.orient, OFFSET_QUANTUM)
                succ = st._replace(col=ncol, row=nrow, offs=new)
                if math.isfinite(state_pose_cost(stack, succ)):
                    push("shift_base", {}, succ, params.shift_penalty)

    if level == 3 and ok("step_robot"):
        # step_robot: whole-robot hop over a blocked band, neutral stance
        hx, hy = heading(stack, 3, st.orient)
        fwd_col, fwd_row = shifted_cell(stack, 3, st.col, st.row, st.orient, res)
        fwd_pose = stack.pose_cost(3, fwd_col, fwd_row, st.orient)
        if not math.isfinite(fwd_pose):
            fg = _fast(stack, 3)
            step_max = stack.params.step_max
            feet_now = _foot_world(stack, st)
            for t in range(1, 6):
                succ = transition(stack, st, Maneuver("step_robot", {"travel_cells": t}, 0.0))
                pose1 = state_pose_cost(stack, succ)
                if not math.isfinite(pose1):
                    continue
                feet_next = _foot_world(stack, succ)
                good = True
                for (fx, fy), (lx, ly) in zip(feet_now, feet_next):
                    h_from = fg.height(fx, fy)
                    h_to = fg.height(lx, ly)
                    if not (math.isfinite(h_from) and math.isfinite(h_to)):
                        good = False
                        break
                    if abs(h_to - h_from) > step_max + 1e-9:
                        good = False
                        break
                    if _chord_crest(fg, (fx, fy), (lx, ly)) > h_from + step_max + 1e-9:
                        good = False
                        break
                if good:
                    cost = 4.0 * params.step_penalty * 0.5 * (pose0 + pose1) + 8.0 * params.shift_penalty
                    push("step_robot", {"travel_cells": t}, succ, cost)

    return out


def apply_maneuver(stack: CostStack, st: LatticeState, man: Maneuver) -> LatticeState:
    nxt = transition(stack, st, man)
    to_level = man.params.get("to_level")
    if to_level is not None and int(to_level) != nxt.level:
        nxt = convert_state(stack, nxt, int(to_level))
    return nxt


def replay_plan(stack: CostStack, plan: PathPlan) -> bool:
    """Re-run the maneuver sequence through the pure transition rules and
    check that it reproduces the stored states and total cost."""
    st = plan.states[0]
    for man, expect in zip(plan.maneuvers, plan.states[1:]):
        st = apply_maneuver(stack, st, man)
        if st != expect:
            return False
    total = 0.0
    for man in plan.maneuvers:
        total += man.cost
    return abs(total - plan.total_cost) <= 1e-9


# --------------------------------------------------------------------------
# heuristic
# --------------------------------------------------------------------------


@dataclass
class HeuristicField:
    """Cost-to-go potentials from two Dijkstra sweeps on the coarse grid.

    base_dist holds plain meters of remaining travel (hops across blocked
    bands priced at their width), evaluated at the base: a bound on the
    travel pool alone, sharp near the goal.  foot_dist prices each hop with
    a stepping surcharge and is evaluated per wheel at quarter scale, so a
    foot carried over a band cashes in its share of the crossing the moment
    it lands.  Cells outside the coarse graph borrow the nearest valued cell
    (a wheel in a band's shadow keeps its own side's value); remaining
    infinities evaluate to zero, so the field guides but never prunes.
    """

    base_dist: np.ndarray
    foot_dist: np.ndarray
    scale: float
    base_slack: float
    foot_slack: float
    hmap: object

    def __post_init__(self):
        # plain-python mirrors for the per-expansion lookups
        self._base_rows = self.base_dist.tolist()
        self._foot_rows = self.foot_dist.tolist()
        self._ox, self._oy = self.hmap.origin
        self._res = self.hmap.resolution
        self._nc = self.hmap.n_cols
        self._nr = self.hmap.n_rows

    def value_base(self, x: float, y: float) -> float:
        col = round((x - self._ox) / self._res)
        row = round((y - self._oy) / self._res)
        if 0 <= col < self._nc and 0 <= row < self._nr:
            d = self._base_rows[row][col]
            if d != math.inf:
                d -= self.base_slack
                if d > 0.0:
                    return self.scale * d
        return 0.0

    def value_foot(self, x: float, y: float) -> float:
        col = round((x - self._ox) / self._res)
        row = round((y - self._oy) / self._res)
        if 0 <= col < self._nc and 0 <= row < self._nr:
            d = self._foot_rows[row][col]
            if d != math.inf:
                d -= self.foot_slack
                if d > 0.0:
                    return 0.25 * self.scale * d
        return 0.0


def precompute_heuristic(
    stack: CostStack,
    goal_xy: tuple,
    params: SearchParams | None = None,
    slack_m: float | None = None,
) -> HeuristicField:
    from scipy import ndimage
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import dijkstra as cs_dijkstra

    params = params or SearchParams()
    hmap = stack.maps[3]
    res = hmap.resolution
    rows, cols = hmap.n_rows, hmap.n_cols
    finite = np.isfinite(stack.foot[3].costs)
    gcol, grow = hmap.world_to_grid(goal_xy[0], goal_xy[1])
    if not hmap.in_bounds(gcol, grow) or not finite[grow, gcol]:
        raise PlanningError("goal cell is untraversable on the coarse grid")

    H = hmap.cells
    B = np.where(np.isnan(H), np.inf, H)  # unknown blocks chords
    idx = np.arange(rows * cols).reshape(rows, cols)
    step_max = stack.params.step_max

    src = []
    dst = []
    wgt_base = []
    wgt_foot = []

    def window(dr: int, dc: int, t: int):
        r0 = max(0, -dr * t)
        r1 = rows - max(0, dr * t)
        c0 = max(0, -dc * t)
        c1 = cols - max(0, dc * t)
        if r1 <= r0 or c1 <= c0:
            return None
        a = (slice(r0, r1), slice(c0, c1))
        b = (slice(r0 + dr * t, r1 + dr * t), slice(c0 + dc * t, c1 + dc * t))
        return a, b

    axes = ((0, 1, res), (1, 0, res), (1, 1, res * math.sqrt(2.0)), (1, -1, res * math.sqrt(2.0)))

    # adjacent drivable cells
    for dr, dc, w in axes:
        win = window(dr, dc, 1)
        if win is None:
            continue
        a, b = win
        mask = finite[a] & finite[b]
        if mask.any():
            src.append(idx[a][mask])
            dst.append(idx[b][mask])
            wgt_base.append(np.full(int(mask.sum()), w))
            wgt_foot.append(np.full(int(mask.sum()), w))

    # hop edges across blocked bands: carrying one foot over costs at least
    # one step maneuver, so the hop carries that floor as a surcharge, capped
    # so a quarter-scale credit at the widest hop never exceeds a step's cost
    # (cell-rounding forgiveness of 3 cells included)
    hop_extra = max(
        0.0,
        4.0 * params.step_penalty * stack.params.min_pose_cost() / params.h_scale
        - (params.jump_max_cells + 3) * res,
    )
    for dr, dc, w in axes:
        for t in range(params.jump_min_cells, params.jump_max_cells + 1):
            win = window(dr, dc, t)
            if win is None:
                continue
            a, b = win
            ha = H[a]
            hb = H[b]
            mask = finite[a] & finite[b] & (np.abs(hb - ha) <= step_max + 1e-9)
            if not mask.any():
                continue
            crest = np.full(ha.shape, -np.inf)
            for k in range(1, t):
                mid = (slice(a[0].start + dr * k, a[0].stop + dr * k),
                       slice(a[1].start + dc * k, a[1].stop + dc * k))
                crest = np.maximum(crest, B[mid])
            mask &= crest <= np.maximum(ha, hb) + step_max + 1e-9
            if mask.any():
                src.append(idx[a][mask])
                dst.append(idx[b][mask])
                wgt_base.append(np.full(int(mask.sum()), w * t))
                wgt_foot.append(np.full(int(mask.sum()), min(w * t, res * t) + hop_extra))

    n = rows * cols
    goal_node = int(idx[grow, gcol])

    def sweep(wgt: list) -> np.ndarray:
        if src:
            graph = coo_matrix(
                (np.concatenate(wgt), (np.concatenate(src), np.concatenate(dst))), shape=(n, n)
            )
        else:
            graph = coo_matrix((n, n))
        d2 = cs_dijkstra(graph.tocsr(), directed=False, indices=goal_node).reshape(rows, cols)
        # cells outside the graph (un-drivable at this resolution) borrow the
        # nearest valued cell so feet standing in a band's shadow keep the
        # value of their own side rather than dropping to zero
        valued = np.isfinite(d2)
        if valued.any() and not valued.all():
            _, (ir, ic) = ndimage.distance_transform_edt(~valued, return_indices=True)
            d2 = d2[ir, ic]
        return d2

    if slack_m is None:
        slack_m = math.hypot(robot.STANCE_SIZE, robot.STANCE_SIZE) * 0.5 * OCTILE + params.h_slack
    return HeuristicField(
        sweep(wgt_base), sweep(wgt_foot), params.h_scale, params.h_slack, slack_m, hmap
    )


# --------------------------------------------------------------------------
# anytime search
# --------------------------------------------------------------------------


def _reconstruct(parent, goal, eps, expansions, t0) -> PathPlan:
    states = [goal]
    mans = []
    s = goal
    while parent[s] is not None:
        prev, man = parent[s]
        states.append(prev)
        mans.append(man)
        s = prev
    states.reverse()
    mans.reverse()
    # sum the chain's own edges: an ancestor's g may have improved after this
    # goal g was recorded, making the spliced chain cheaper than g[goal]
    total = 0.0
    for man in mans:
        total += man.cost
    return PathPlan(
        tuple(states),
        tuple(mans),
        quantize_cost(total),
        eps,
        expansions,
        (time.perf_counter() - t0) * 1000.0,
    )


def plan_states(
    stack: CostStack,
    start: LatticeState,
    goal: LatticeState,
    *,
    params: SearchParams | None = None,
    layout: LevelLayout | None = None,
    eps_schedule: tuple | None = None,
    budget_ms: float = 10000.0,
    allowed: frozenset | None = None,
    cancel=None,
    cell_mask: dict | None = None,
    hfield: HeuristicField | None = None,
    use_heuristic: bool = True,
    on_solution=None,
) -> PlanResult:
    """Anytime search between two lattice states.  Publishes one plan per
    schedule step; each published cost is bounded by its epsilon times the
    optimum (given the heuristic lower-bounds true cost on this terrain).
    Raises NoPathError only after exhausting the reachable space."""
    params = params or SearchParams()
    t0 = time.perf_counter()
    budget_s = budget_ms / 1000.0

    if start == goal:
        plan = PathPlan((start,), (), 0.0, 1.0, 0, 0.0)
        if on_solution:
            on_solution(plan)
        return PlanResult([plan], 0, 0.0)
    if not math.isfinite(state_pose_cost(stack, start)):
        raise PlanningError("start stance is untraversable")
    if not math.isfinite(state_pose_cost(stack, goal)):
        raise NoPathError("goal stance is untraversable")

    if hfield is None and use_heuristic:
        gx, gy = stack.base_world(goal.level, goal.col, goal.row)
        reach = max(math.hypot(px, py) for px, py in robot.foot_points(0.0, 0.0, 0.0, goal.offsets4_m()))
        hfield = precompute_heuristic(stack, (gx, gy), params, slack_m=reach * OCTILE + params.h_slack)

    hmemo: dict = {}
    goal_yaw = stack.yaw_of(goal.level, goal.orient)
    min_pose = stack.params.min_pose_cost()
    turn_per_rad = params.turn_inertia * min_pose
    shift_pen = params.shift_penalty
    # the stance-corrective floor assumes the goal stance is all-neutral
    stance_floor = all(q == 0 for q in goal.offsets4_q())

    def h(s: LatticeState) -> float:
        """Admissible cost-to-go, the larger of two lower bounds plus a turn
        floor.  Bound A: base travel in plain meters plus one corrective
        maneuver per foot off the stance's common shift or below it (travel,
        stance, and turn floors consume disjoint cost pools).  Bound B: the
        sum over wheels of max(crossing-aware travel potential, that foot's
        corrective floor), each term a bound on the foot's own share."""
        v = hmemo.get(s)
        if v is None:
            offs4 = s.offsets4_q()
            floor_sum = 0.0
            floors = (0.0, 0.0, 0.0, 0.0)
            if stance_floor and offs4 != (0, 0, 0, 0):
                best = 0
                hits = -1
                for u in range(0, COMMON_SHIFT_MIN_Q - 1, -1):
                    c = offs4.count(u)
                    if c > hits:
                        hits = c
                        best = u
                floors = tuple(
                    shift_pen if (q != best or q < 0) else 0.0 for q in offs4
                )
                floor_sum = floors[0] + floors[1] + floors[2] + floors[3]
            yaw = stack.yaw_of(s.level, s.orient)
            if hfield is not None:
                x, y = stack.base_world(s.level, s.col, s.row)
                a = hfield.value_base(x, y) + floor_sum
                b = 0.0
                feet = robot.foot_points(x, y, yaw, s.offsets4_m())
                for (fx, fy), fl in zip(feet, floors):
                    pot = hfield.value_foot(fx, fy)
                    b += pot if pot > fl else fl
                v = a if a > b else b
            else:
                v = floor_sum
            dyaw = abs(robot.wrap_angle(yaw - goal_yaw))
            v += dyaw * turn_per_rad
            hmemo[s] = v
        return v

    schedule = tuple(eps_schedule if eps_schedule is not None else params.eps_schedule)
    if not schedule or schedule[-1] != 1.0:
        schedule = schedule + (1.0,)

    g = {start: 0.0}
    parent: dict = {start: None}
    succ_cache: dict = {}
    expansions = 0
    plans: list = []

    heap = [(schedule[0] * h(start), 0.0, start)]
    incons: dict = {}
    exhausted = False

    def out_of_budget() -> bool:
        return time.perf_counter() - t0 > budget_s

    def finish(flag: str) -> PlanResult:
        r = PlanResult(plans, expansions, (time.perf_counter() - t0) * 1000.0)
        if flag == "budget":
            r.budget_exhausted = True
        elif flag == "cancel":
            r.cancelled = True
        return r

    for sched_i, eps in enumerate(schedule):
        closed: set = set()
        while heap:
            if cancel is not None and cancel.is_set():
                if plans:
                    return finish("cancel")
                raise PlanCancelledError("planning cancelled", expansions)
            f, ng, s = heap[0]
            if g.get(s) != -ng:
                heapq.heappop(heap)
                continue
            g_goal = g.get(goal)
            if g_goal is not None and g_goal <= f + 1e-12:
                break
            heapq.heappop(heap)
            if s in closed:
                continue
            closed.add(s)
            expansions += 1
            if expansions % 64 == 0 and out_of_budget():
                if plans:
                    return finish("budget")
                raise BudgetExhaustedError(
                    f"no plan within {budget_ms:.0f} ms ({expansions} expansions)",
                    expansions,
                )
            succs = succ_cache.get(s)
            if succs is None:
                succs = successors(
                    stack, s, params, layout=layout, allowed=allowed, cell_mask=cell_mask
                )
                # cache accelerates re-expansion across epsilon rounds; cap it
                # so exhaustion proofs on large maps stay within memory
                if len(succ_cache) < _SUCC_CACHE_MAX:
                    succ_cache[s] = succs
            gs = g[s]
            for s2, man in succs:
                g2 = gs + man.cost
                old = g.get(s2)
                if old is None or g2 < old:
                    g[s2] = g2
                    parent[s2] = (s, man)
                    if s2 in closed:
                        if eps <= 1.0:
                            closed.discard(s2)
                            heapq.heappush(heap, (g2 + eps * h(s2), -g2, s2))
                        else:
                            incons[s2] = True
                    else:
                        heapq.heappush(heap, (g2 + eps * h(s2), -g2, s2))

        if goal not in g:
            # open list exhausted without touching the goal: with nothing
            # pruned by the heuristic this is a proof of unreachability
            raise NoPathError(
                "reachable states exhausted without finding the goal", expansions
            )

        plan = _reconstruct(parent, goal, eps, expansions, t0)
        plans.append(plan)
        if on_solution:
            on_solution(plan)

        # carry surviving open entries plus locally inconsistent states into
        # the next iteration, re-keyed with its epsilon
        cand = {}
        for f, ng, s in heap:
            if g.get(s) == -ng:
                cand[s] = -ng
        for s in incons:
            cand[s] = g[s]
        incons = {}
        if not cand:
            exhausted = True
            break
        if sched_i + 1 >= len(schedule):
            break
        nxt = schedule[sched_i + 1]
        heap = [(gv + nxt * h(s), -gv, s) for s, gv in cand.items()]
        heapq.heapify(heap)
        if out_of_budget():
            return finish("budget")

    if exhausted and plans and plans[-1].epsilon != 1.0:
        # search space fully explored: the incumbent is exact
        final = plans[-1]._replace(epsilon=1.0)
        plans.append(final)
        if on_solution:
            on_solution(final)
    return finish("")


def plan_driving_first(
    stack: CostStack,
    start: LatticeState,
    goal: LatticeState,
    *,
    params: SearchParams | None = None,
    layout: LevelLayout | None = None,
    eps_schedule: tuple | None = None,
    budget_ms: float = 10000.0,
    triage_ms: float | None = None,
    cancel=None,
    cell_mask: dict | None = None,
    hfield: HeuristicField | None = None,
    use_heuristic: bool = True,
    on_solution=None,
) -> PlanResult:
    """Two-pass planning policy.  Most goals are reachable on wheels, and the
    pure driving space is orders of magnitude smaller than the full hybrid
    space, so a capped driving-only pass runs first and its answer is kept
    when it reaches the goal.  A driving no-path never means unreachable, it
    means stepping is required: the full search then takes what is left of
    the budget.  The triage cap bounds the cost of a wrong first guess.

    The returned plan can drive around an obstacle that a stepping plan would
    cross; the policy trades that edge of optimality for fast answers on the
    common case.  Callers that need the unbiased search use plan_states."""
    params = params or SearchParams()
    t0 = time.perf_counter()
    if hfield is None and use_heuristic:
        gx, gy = stack.base_world(goal.level, goal.col, goal.row)
        reach = max(math.hypot(px, py) for px, py in robot.foot_points(0.0, 0.0, 0.0, goal.offsets4_m()))
        hfield = precompute_heuristic(stack, (gx, gy), params, slack_m=reach * OCTILE + params.h_slack)
    cap = min(0.25 * budget_ms, 3000.0) if triage_ms is None else triage_ms
    cap = min(cap, budget_ms)
    same_heading = stack.yaw_of(start.level, start.orient) == stack.yaw_of(goal.level, goal.orient)
    kinds = frozenset({"drive"}) if same_heading else DRIVING_TURNING_KINDS
    spent = 0
    if cap > 0.0:
        try:
            return plan_states(
                stack,
                start,
                goal,
                params=params,
                layout=layout,
                eps_schedule=eps_schedule,
                budget_ms=cap,
                allowed=kinds,
                cancel=cancel,
                cell_mask=cell_mask,
                hfield=hfield,
                use_heuristic=use_heuristic,
                on_solution=on_solution,
            )
        except (NoPathError, BudgetExhaustedError) as err:
            spent = err.expansions
    remaining = budget_ms - (time.perf_counter() - t0) * 1000.0
    if remaining <= 0.0:
        raise BudgetExhaustedError(
            f"no plan within {budget_ms:.0f} ms ({spent} expansions)", spent
        )
    try:
        result = plan_states(
            stack,
            start,
            goal,
            params=params,
            layout=layout,
            eps_schedule=eps_schedule,
            budget_ms=remaining,
            cancel=cancel,
            cell_mask=cell_mask,
            hfield=hfield,
            use_heuristic=use_heuristic,
            on_solution=on_solution,
        )
    except PlanningError as err:
        err.expansions += spent
        raise
    return PlanResult(
        result.plans,
        result.expansions + spent,
        (time.perf_counter() - t0) * 1000.0,
        result.budget_exhausted,
        result.cancelled,
    )


def plan_ara_star(
    stack: CostStack,
    start_pose: tuple,
    goal_pose: tuple,
    *,
    layout="auto",
    params: SearchParams | None = None,
    eps_schedule: tuple | None = None,
    budget_ms: float = 10000.0,
    allowed: frozenset | None = None,
    driving_first: bool = False,
    cancel=None,
    use_heuristic: bool = True,
    on_solution=None,
) -> PlanResult:
    """Pose-level planning entry point.  start_pose/goal_pose are (x, y, yaw)
    in meters/radians.  layout="auto" anchors the level rings at the start;
    None keeps the whole search on the fine grid."""
    params = params or SearchParams()
    if layout == "auto":
        layout = LevelLayout((float(start_pose[0]), float(start_pose[1])))
    start_level = layout.level_for(start_pose[0], start_pose[1]) if layout else 1
    goal_level = layout.level_for(goal_pose[0], goal_pose[1]) if layout else 1
    start = state_from_pose(stack, start_level, *start_pose)
    goal = state_from_pose(stack, goal_level, *goal_pose)
    if driving_first and allowed is None:
        return plan_driving_first(
            stack,
            start,
            goal,
            params=params,
            layout=layout,
            eps_schedule=eps_schedule,
            budget_ms=budget_ms,
            cancel=cancel,
            use_heuristic=use_heuristic,
            on_solution=on_solution,
        )
    return plan_states(
        stack,
        start,
        goal,
        params=params,
        layout=layout,
        eps_schedule=eps_schedule,
        budget_ms=budget_ms,
        allowed=allowed,
        cancel=cancel,
        use_heuristic=use_heuristic,
        on_solution=on_solution,
    )
