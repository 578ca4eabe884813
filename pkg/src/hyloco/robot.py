"""Robot geometry shared by every layer.

A wheeled-leg quadruped: square base, one leg per base corner, an actively
driven wheel at each foot.  All lengths in meters, world frame x forward /
y left / z up, base yaw measured from +x.
"""
from __future__ import annotations

import math

import numpy as np

WHEEL_RADIUS = 0.078
BASE_SIZE = 0.61          # square base edge length
LEG_LENGTH = 0.81         # hip-to-foot kinematic chain, fully stretched
CLEARANCE_HEIGHT = 0.60   # nominal base height above wheel contacts

# Neutral stance: feet at the corners of a square centered under the base.
STANCE_SIZE = 0.80

# Reachability shell of a leg, 3D hip-to-foot distance.
LEG_REACH_MIN = 0.25
LEG_REACH_MAX = LEG_LENGTH

# Base attitude envelope; pitch lets the hips follow the terrain slope.
ATTITUDE_MAX = math.radians(20.0)

# Foot order everywhere: FL, FR, RL, RR.
FOOT_NAMES = ("FL", "FR", "RL", "RR")
N_FEET = 4

_H = STANCE_SIZE / 2.0
# base-frame neutral foot positions, (x forward, y left)
NEUTRAL_FEET = np.array(
    [[+_H, +_H], [+_H, -_H], [-_H, +_H], [-_H, -_H]], dtype=float
)

_B = BASE_SIZE / 2.0
HIP_CORNERS = np.array(
    [[+_B, +_B], [+_B, -_B], [-_B, +_B], [-_B, -_B]], dtype=float
)

# index of the foot on the same side (front<->rear partner)
SAME_SIDE_PARTNER = (2, 3, 0, 1)
DIAGONAL_PARTNER = (3, 2, 1, 0)
FRONT_FEET = (0, 1)
REAR_FEET = (2, 3)


def rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def foot_positions(base_xy: np.ndarray, yaw: float, offsets) -> np.ndarray:
    """World xy of all four feet for longitudinal `offsets` (per foot, meters)."""
    local = NEUTRAL_FEET.copy()
    local[:, 0] += np.asarray(offsets, dtype=float)
    return np.asarray(base_xy, dtype=float) + local @ rot2(yaw).T


_NEUTRAL_XY = ((+_H, +_H), (+_H, -_H), (-_H, +_H), (-_H, -_H))


def foot_points(bx: float, by: float, yaw: float, offsets) -> list:
    """Scalar-math variant of foot_positions for the planner's hot path."""
    c, s = math.cos(yaw), math.sin(yaw)
    out = []
    for i in range(N_FEET):
        lx = _NEUTRAL_XY[i][0] + offsets[i]
        ly = _NEUTRAL_XY[i][1]
        out.append((bx + c * lx - s * ly, by + s * lx + c * ly))
    return out


def hip_positions(base_xy: np.ndarray, yaw: float) -> np.ndarray:
    return np.asarray(base_xy, dtype=float) + HIP_CORNERS @ rot2(yaw).T


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def convex_hull(pts: list) -> list:
    """Counterclockwise hull (Andrew monotone chain); collinear inputs
    collapse to their extreme segment."""
    pts = sorted(set(pts))
    if len(pts) <= 2:
        return pts

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                ox, oy = out[-2]
                ax, ay = out[-1]
                if (ax - ox) * (p[1] - oy) - (ay - oy) * (p[0] - ox) > 0.0:
                    break
                out.pop()
            out.append(p)
        return out[:-1]

    lower = half(pts)
    upper = half(reversed(pts))
    return lower + upper


def _seg_dist(p: tuple, a: tuple, b: tuple) -> float:
    ax, ay = a
    dx, dy = b[0] - ax, b[1] - ay
    L2 = dx * dx + dy * dy
    if L2 == 0.0:
        return math.hypot(p[0] - ax, p[1] - ay)
    t = ((p[0] - ax) * dx + (p[1] - ay) * dy) / L2
    t = min(1.0, max(0.0, t))
    return math.hypot(p[0] - ax - t * dx, p[1] - ay - t * dy)


def support_margin(point: tuple, support_xy: list) -> float:
    """Signed distance from a ground point to the support polygon boundary:
    positive inside (the inscribed clearance), negative outside (euclidean
    distance to the hull).  Degenerate supports are never positive."""
    hull = convex_hull([(float(x), float(y)) for x, y in support_xy])
    if not hull:
        raise ValueError("support polygon needs at least one point")
    if len(hull) == 1:
        return -math.hypot(point[0] - hull[0][0], point[1] - hull[0][1])
    if len(hull) == 2:
        return -_seg_dist(point, hull[0], hull[1])
    inside = math.inf
    outside = math.inf
    is_in = True
    for i, a in enumerate(hull):
        b = hull[(i + 1) % len(hull)]
        ex, ey = b[0] - a[0], b[1] - a[1]
        cross = ex * (point[1] - a[1]) - ey * (point[0] - a[0])
        d = cross / math.hypot(ex, ey)  # positive on the interior side (CCW)
        if d < 0.0:
            is_in = False
        inside = min(inside, d)
        outside = min(outside, _seg_dist(point, a, b))
    return inside if is_in else -outside
