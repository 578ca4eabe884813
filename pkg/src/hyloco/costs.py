"""Terrain costs: per-cell foot costs, oriented body costs, pose costs,
and coarse-level terrain features.

Foot costs price where a wheel may stand and drive; body costs price where
the base may hover at a given yaw; a pose cost combines one body and four
foot lookups.  Infinite cost means untraversable.  All layers are pure
functions of the height grid and the parameter set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy import ndimage

from . import robot
from .world import HeightMap, downsample

LEVELS = (1, 2, 3)
LEVEL_FACTORS = {1: 1, 2: 2, 3: 4}
ORIENT_COUNTS = {1: 64, 2: 32, 3: 16}

# stance reach legality: hip lateral offset from its foot column, and the
# vertical credit a full-envelope base pitch can give the hips
_HIP_DY2 = (robot.STANCE_SIZE / 2.0 - robot.BASE_SIZE / 2.0) ** 2
_PITCH_REACH = (robot.BASE_SIZE / 2.0) * math.sin(robot.ATTITUDE_MAX)
_REACH_MAX2 = robot.LEG_REACH_MAX**2
_REACH_MIN2 = robot.LEG_REACH_MIN**2

# minimum static margin of the base center inside the planted-feet hull;
# keeps every lattice stance executable with headroom over the runtime check
STANCE_MARGIN_MIN = 0.05
_stance_margin_cache: dict = {}


def stance_margin_q(offs_q: tuple) -> float:
    """Static support margin of the base center for stance offsets in
    0.05 m quanta.  Pure stance geometry, independent of terrain."""
    hit = _stance_margin_cache.get(offs_q)
    if hit is None:
        feet = [
            (robot.NEUTRAL_FEET[i][0] + offs_q[i] * 0.05, robot.NEUTRAL_FEET[i][1])
            for i in range(robot.N_FEET)
        ]
        hit = robot.support_margin((0.0, 0.0), feet)
        _stance_margin_cache[offs_q] = hit
    return hit

CLASS_FLAT = 0
CLASS_ROUGH = 1
CLASS_STEP_EDGE = 2
CLASS_UNTRAVERSABLE = 3
CLASS_NAMES = ("flat", "rough", "step_edge", "untraversable")


@dataclass(frozen=True)
class CostParams:
    drivable_step_max: float = 0.05   # max height step a rolling wheel tolerates
    step_max: float = 0.30            # max height change a stepping foot tolerates
    w_slope: float = 2.0
    w_rough: float = 1.0
    w_bslope: float = 1.0
    w_body: float = 1.0
    rough_ref: float = 0.05
    inflation_radius: float = 0.10
    inflation_max_penalty: float = 2.0
    # gate above the steepest plane fit a climbable stair field produces
    # (0.20/0.30 treads fit at up to ~36.5 deg when the window straddles two
    # risers); the base itself never tilts that far, legs absorb the rest
    slope_max_deg: float = 38.0
    clearance_max: float = 0.25
    wheel_radius: float = robot.WHEEL_RADIUS
    base_size: float = robot.BASE_SIZE

    def min_pose_cost(self) -> float:
        """Cheapest possible pose (flat ground): body 1 plus four feet at 1."""
        return self.w_body * 1.0 + robot.N_FEET * 1.0


def _wheel_footprint(resolution: float, radius: float) -> np.ndarray:
    n = int(radius / resolution + 1e-9)
    di, dj = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1))
    return np.hypot(di, dj) * resolution <= radius + 1e-12


def _neighbor_step(cells: np.ndarray) -> np.ndarray:
    """Max |height difference| to any of the 8 neighbors; NaN where unknown."""
    h = cells
    out = np.zeros_like(h)
    padded = np.pad(h, 1, constant_values=np.nan)
    diffs = []
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            shifted = padded[1 + dj : 1 + dj + h.shape[0], 1 + di : 1 + di + h.shape[1]]
            diffs.append(np.abs(h - shifted))
    stack = np.stack(diffs)
    with np.errstate(all="ignore"):
        out = np.where(np.all(np.isnan(stack), axis=0), 0.0, np.nanmax(stack, axis=0))
    out[np.isnan(h)] = np.nan
    return out


@dataclass
class FootCostMap:
    level: int
    costs: np.ndarray          # +inf = untraversable for a wheel
    step8: np.ndarray          # own-cell max |dh| to 8 neighbors
    window_step: np.ndarray    # max step anywhere inside the wheel window
    resolution: float
    origin: tuple[float, float]

    def cost(self, col: int, row: int) -> float:
        if not (0 <= col < self.costs.shape[1] and 0 <= row < self.costs.shape[0]):
            return math.inf
        return float(self.costs[row, col])


def compute_foot_costs(hmap: HeightMap, params: CostParams, level: int = 1) -> FootCostMap:
    h = hmap.cells
    res = hmap.resolution
    fp = _wheel_footprint(res, params.wheel_radius)

    step8 = _neighbor_step(h)
    s_inf = np.where(np.isnan(step8), np.inf, step8)
    window_step = ndimage.maximum_filter(s_inf, footprint=fp, mode="nearest")
    infinite = window_step > params.drivable_step_max

    # unknown anywhere under the wheel window also kills the cell
    unknown = np.isnan(h).astype(float)
    unknown_near = ndimage.maximum_filter(unknown, footprint=fp, mode="nearest") > 0
    infinite |= unknown_near

    slope_term = np.minimum(np.nan_to_num(step8) / res, 1.0)

    kernel = fp.astype(float)
    known = (~np.isnan(h)).astype(float)
    h0 = np.nan_to_num(h)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = ndimage.correlate(known, kernel, mode="nearest")
        s1 = ndimage.correlate(h0, kernel, mode="nearest")
        s2 = ndimage.correlate(h0 * h0, kernel, mode="nearest")
        mean = s1 / n
        var = np.maximum(s2 / n - mean * mean, 0.0)
    sigma = np.sqrt(np.nan_to_num(var))
    rough_term = np.minimum(sigma / params.rough_ref, 1.0)

    if infinite.any():
        dist = ndimage.distance_transform_edt(~infinite, sampling=res)
        proximity = params.inflation_max_penalty * np.clip(
            1.0 - dist / params.inflation_radius, 0.0, 1.0
        )
    else:
        proximity = np.zeros_like(h0)

    costs = 1.0 + params.w_slope * slope_term + params.w_rough * rough_term + proximity
    costs[infinite] = np.inf
    return FootCostMap(level, costs, step8, window_step, res, hmap.origin)


# --------------------------------------------------------------------------
# body costs
# --------------------------------------------------------------------------


class BodyCostField:
    """Cost of hovering the base over a cell at a yaw.  Computed lazily per
    cell and cached; full grids per orientation are built vectorized when a
    whole layer is exported.  The base is square, so orientations repeat with
    period 90 degrees and share masks.

    The chassis rides on whatever the wheels can stand on, so the reference
    plane is fit to wheel-standable cells near the top of the footprint's
    support surface.  Holes below it (trenches, drop-offs) neither carry nor
    hit the base; anything rising above it by more than clearance_max does."""

    def __init__(
        self,
        hmap: HeightMap,
        params: CostParams,
        orient_count: int,
        level: int = 1,
        foot: FootCostMap | None = None,
    ):
        self.level = level
        self.hmap = hmap
        self.params = params
        self.orient_count = orient_count
        if foot is not None:
            self._standable = np.isfinite(foot.costs)
        else:
            self._standable = ~np.isnan(hmap.cells)
        self._masks: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        self._pinvs: dict[int, np.ndarray] = {}
        self._cells: dict[tuple[int, int, int], float] = {}
        self._grids: dict[int, np.ndarray] = {}
        slope_max = math.radians(params.slope_max_deg)
        self._tan_slope_max = math.tan(slope_max)

    def _mask_key(self, orient: int) -> int:
        return orient % max(self.orient_count // 4, 1)

    def _mask(self, orient: int):
        key = self._mask_key(orient)
        if key not in self._masks:
            res = self.hmap.resolution
            half = self.params.base_size / 2.0
            theta = 2.0 * math.pi * key / self.orient_count
            n = int(math.ceil((half * math.sqrt(2.0)) / res)) + 1
            di, dj = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1))
            x = di * res
            y = dj * res
            c, s = math.cos(-theta), math.sin(-theta)
            bx = c * x - s * y
            by = s * x + c * y
            inside = (np.abs(bx) <= half + 1e-12) & (np.abs(by) <= half + 1e-12)
            off_i = di[inside].ravel()
            off_j = dj[inside].ravel()
            design = np.column_stack([off_i * res, off_j * res, np.ones(off_i.size)])
            self._masks[key] = (off_i, off_j, design)
            self._pinvs[key] = np.linalg.pinv(design)
        return key, self._masks[key]

    def cost(self, col: int, row: int, orient: int) -> float:
        key = (col, row, self._mask_key(orient))
        hit = self._cells.get(key)
        if hit is not None:
            return hit
        value = self._compute_cell(col, row, orient)
        self._cells[key] = value
        return value

    def _compute_cell(self, col: int, row: int, orient: int) -> float:
        mkey, (off_i, off_j, design) = self._mask(orient)
        h = self.hmap.cells
        rows = row + off_j
        cols = col + off_i
        if rows.min() < 0 or cols.min() < 0 or rows.max() >= h.shape[0] or cols.max() >= h.shape[1]:
            return math.inf
        z = h[rows, cols]
        known = ~np.isnan(z)
        if known.sum() < max(3, known.size // 2):
            return math.inf
        floor = max(3, known.size // 8)
        stand = self._standable[rows, cols] & known
        if stand.sum() < floor:
            return math.inf
        # support plane: standable cells near the top of the support surface
        zref = float(np.quantile(z[stand], 0.9))
        sup = stand & (z >= zref - self.params.clearance_max)
        if sup.sum() < floor:
            return math.inf
        if sup.all():
            coef = self._pinvs[mkey] @ z
        else:
            coef, *_ = np.linalg.lstsq(design[sup], z[sup], rcond=None)
        grad = math.hypot(coef[0], coef[1])
        if grad > self._tan_slope_max + 1e-12:
            return math.inf
        resid = z[known] - design[known] @ coef
        if resid.max() > self.params.clearance_max:
            return math.inf
        slope_deg = math.degrees(math.atan(grad))
        return 1.0 + self.params.w_bslope * slope_deg / self.params.slope_max_deg

    def grid(self, orient: int) -> np.ndarray:
        """Full body-cost layer for one orientation (cached)."""
        mkey, (off_i, off_j, design) = self._mask(orient)
        if mkey in self._grids:
            return self._grids[mkey]
        h = self.hmap.cells
        n_rows, n_cols = h.shape
        pad = int(max(np.abs(off_i).max(), np.abs(off_j).max()))
        hp = np.pad(h, pad, constant_values=np.nan)
        sp = np.pad(self._standable, pad, constant_values=False)
        pinv = self._pinvs[mkey]
        K = off_i.size
        out = np.full((n_rows, n_cols), np.inf)
        H = np.empty((K, n_cols))
        S = np.empty((K, n_cols), dtype=bool)
        for r in range(n_rows):
            for k in range(K):
                sl = slice(pad + off_i[k], pad + off_i[k] + n_cols)
                H[k] = hp[r + off_j[k] + pad, sl]
                S[k] = sp[r + off_j[k] + pad, sl]
            # fast path: every footprint cell known, standable, and within
            # the support band, so the full-mask pseudoinverse applies
            bad = np.isnan(H).any(axis=0) | ~S.all(axis=0)
            with np.errstate(invalid="ignore"):
                zref = np.nanquantile(np.where(S & ~np.isnan(H), H, np.nan), 0.9, axis=0)
                bad |= np.isnan(zref)
                bad |= (H < zref - self.params.clearance_max).any(axis=0)
            coef = pinv @ np.where(np.isnan(H), 0.0, H)
            fit = design @ coef
            resid = np.max(H - fit, axis=0)
            grad = np.hypot(coef[0], coef[1])
            slope_deg = np.degrees(np.arctan(grad))
            vals = 1.0 + self.params.w_bslope * slope_deg / self.params.slope_max_deg
            vals = np.where(
                (grad > self._tan_slope_max + 1e-12) | (resid > self.params.clearance_max),
                np.inf,
                vals,
            )
            # partial support (holes, unknowns, band outliers): per-cell path
            for c in np.where(bad)[0]:
                vals[c] = self.cost(int(c), r, orient)
            out[r] = vals
        self._grids[mkey] = out
        return out


def compute_body_costs(
    hmap: HeightMap,
    params: CostParams,
    orient_count: int,
    level: int = 1,
    foot: FootCostMap | None = None,
) -> BodyCostField:
    return BodyCostField(hmap, params, orient_count, level, foot)


# --------------------------------------------------------------------------
# terrain features (coarse levels)
# --------------------------------------------------------------------------


@dataclass
class TerrainFeatures:
    level: int
    height: np.ndarray
    height_difference: np.ndarray  # own-cell max |dh| to 8 neighbors
    terrain_class: np.ndarray      # uint8, CLASS_* constants


def compute_features(hmap: HeightMap, foot: FootCostMap, params: CostParams, level: int) -> TerrainFeatures:
    if level not in (2, 3):
        raise ValueError("features are defined for levels 2 and 3 only")
    h = hmap.cells
    step8 = foot.step8
    wstep = np.where(np.isnan(foot.window_step), np.inf, foot.window_step)
    unknown = np.isnan(h)

    cls = np.full(h.shape, CLASS_FLAT, dtype=np.uint8)
    kernel = _wheel_footprint(hmap.resolution, params.wheel_radius).astype(float)
    known = (~unknown).astype(float)
    h0 = np.nan_to_num(h)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = ndimage.correlate(known, kernel, mode="nearest")
        s1 = ndimage.correlate(h0, kernel, mode="nearest")
        s2 = ndimage.correlate(h0 * h0, kernel, mode="nearest")
        mean = s1 / n
        var = np.maximum(s2 / n - mean * mean, 0.0)
    sigma = np.sqrt(np.nan_to_num(var))
    cls[sigma > params.rough_ref / 2.0] = CLASS_ROUGH

    infinite = ~np.isfinite(foot.costs)
    crossable = infinite & (wstep <= params.step_max) & ~unknown
    cls[crossable] = CLASS_STEP_EDGE
    cls[infinite & ~crossable] = CLASS_UNTRAVERSABLE

    hdiff = np.where(np.isnan(step8), np.inf, step8)
    return TerrainFeatures(level, h.copy(), hdiff, cls)


# --------------------------------------------------------------------------
# the stack
# --------------------------------------------------------------------------


@dataclass
class CostStack:
    params: CostParams
    maps: dict
    foot: dict
    body: dict
    features: dict
    _pose_cache_q: dict = field(default_factory=dict, repr=False)

    def resolution(self, level: int) -> float:
        return self.maps[level].resolution

    def orient_count(self, level: int) -> int:
        return ORIENT_COUNTS[level]

    def yaw_of(self, level: int, orient: int) -> float:
        return 2.0 * math.pi * orient / ORIENT_COUNTS[level]

    def base_world(self, level: int, col: int, row: int) -> tuple[float, float]:
        return self.maps[level].grid_to_world(col, row)

    def foot_cells(
        self, level: int, col: int, row: int, orient: int, offsets: Iterable[float]
    ) -> list[tuple[int, int]]:
        m: HeightMap = self.maps[level]
        bx, by = m.grid_to_world(col, row)
        yaw = self.yaw_of(level, orient)
        feet = robot.foot_points(bx, by, yaw, tuple(offsets))
        return [m.world_to_grid(x, y) for x, y in feet]

    def foot_cost(self, level: int, col: int, row: int) -> float:
        return self.foot[level].cost(col, row)

    def body_cost(self, level: int, col: int, row: int, orient: int) -> float:
        m: HeightMap = self.maps[level]
        if not m.in_bounds(col, row):
            return math.inf
        return self.body[level].cost(col, row, orient)

    def pose_cost(
        self, level: int, col: int, row: int, orient: int, offsets: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    ) -> float:
        """w_body * body + sum of the four foot costs; inf if any part is.
        Offsets snap to the 0.05 m stance lattice."""
        return self.pose_cost_q(
            level, col, row, orient, tuple(round(o * 20.0) for o in offsets)
        )

    def pose_cost_q(
        self, level: int, col: int, row: int, orient: int, offs_q: tuple = (0, 0, 0, 0)
    ) -> float:
        """pose_cost with offsets given as integer 0.05 m quanta (planner hot path).
        Also infinite when the stance static margin drops below the legality
        floor, or when no base attitude can keep every leg's 3D hip-to-foot
        distance inside the reach shell (base at mean contact + clearance,
        pitch allowed up to the attitude envelope)."""
        key = (level, col, row, orient, offs_q)
        hit = self._pose_cache_q.get(key)
        if hit is not None:
            return hit
        if stance_margin_q(offs_q) < STANCE_MARGIN_MIN:
            self._pose_cache_q[key] = math.inf
            return math.inf
        body = self.body_cost(level, col, row, orient)
        if not math.isfinite(body):
            self._pose_cache_q[key] = math.inf
            return math.inf
        total = self.params.w_body * body
        offsets = tuple(q * 0.05 for q in offs_q)
        cells = self.maps[level].cells
        zs = []
        for fc, fr in self.foot_cells(level, col, row, orient, offsets):
            c = self.foot_cost(level, fc, fr)
            if not math.isfinite(c):
                self._pose_cache_q[key] = math.inf
                return math.inf
            total += c
            zs.append(float(cells[fr, fc]))
        base_z = sum(zs) / 4.0 + robot.CLEARANCE_HEIGHT
        for i in range(4):
            dx = robot.NEUTRAL_FEET[i][0] + offsets[i] - robot.HIP_CORNERS[i][0]
            h2 = dx * dx + _HIP_DY2
            dz = base_z - zs[i]
            lo = dz - _PITCH_REACH if dz > _PITCH_REACH else 0.0
            if lo * lo + h2 > _REACH_MAX2:
                self._pose_cache_q[key] = math.inf
                return math.inf
            hi = dz + _PITCH_REACH
            if hi * hi + h2 < _REACH_MIN2:
                self._pose_cache_q[key] = math.inf
                return math.inf
        self._pose_cache_q[key] = total
        return total


def build_cost_stack(hmap: HeightMap, params: CostParams | None = None) -> CostStack:
    params = params or CostParams()
    maps = {1: hmap, 2: downsample(hmap, 2), 3: downsample(hmap, 4)}
    foot = {lvl: compute_foot_costs(maps[lvl], params, lvl) for lvl in LEVELS}
    body = {
        lvl: compute_body_costs(maps[lvl], params, ORIENT_COUNTS[lvl], lvl, foot[lvl])
        for lvl in LEVELS
    }
    features = {
        lvl: compute_features(maps[lvl], foot[lvl], params, lvl) for lvl in (2, 3)
    }
    return CostStack(params, maps, foot, body, features)


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------


def layer_to_u8(arr: np.ndarray) -> np.ndarray:
    """Normalize a layer to uint8 for export; 255 is the infinite/unknown sentinel."""
    out = np.full(arr.shape, 255, dtype=np.uint8)
    finite = np.isfinite(arr)
    if finite.any():
        lo = float(arr[finite].min())
        hi = float(arr[finite].max())
        span = hi - lo if hi > lo else 1.0
        out[finite] = np.round((arr[finite] - lo) / span * 254.0).astype(np.uint8)
    return out


def layer_png_bytes(arr: np.ndarray) -> bytes:
    from io import BytesIO

    from PIL import Image

    img = Image.fromarray(layer_to_u8(arr), mode="L")
    buf = BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()
