"""Expansion of lattice plans into stable keyframe motion.

A plan leaving the search is a chain of stance states; execution needs poses
for the base and every foot at all times.  This layer turns each maneuver
into keyframes (stepping maneuvers become a five-phase stabilized
sub-sequence), checks static stability of every frame, and interpolates the
result into a fixed-rate trajectory under per-keyframe velocity and
acceleration limits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import robot
from .costs import CostStack
from .search import PathPlan

# stabilization budget while one foot is in the air
SHIFT_CAP = 0.25               # longitudinal base shift, meters
ROLL_CAP = math.radians(10.0)  # base roll toward the support side
CROUCH_STEPS = (0.0, 0.05, 0.10, 0.15, 0.20)  # optional base drop when reach binds, meters
ATTITUDE_MAX = robot.ATTITUDE_MAX

LIFT_CLEARANCE = 0.05          # carried foot clears the tallest chord point by this
CONTACT_TOL = 0.01             # contact feet sit on terrain within this

DEFAULT_VMAX = 0.25
DEFAULT_AMAX = 0.50

ANNOTATIONS = ("drive", "leg-move", "base-move")


class ExpansionError(Exception):
    """No stable expansion exists for the given plan."""


@dataclass(frozen=True)
class StabilityModel:
    """Static stability configuration.

    The center of mass sits in the base frame at (com_x, 0, com_z); com_x is
    the arm-posture parameter (arms carried back move it negative).  mass is
    informational only, stability is purely geometric.
    """

    com_x: float = 0.0
    com_z: float = 0.15
    mass: float = 90.0
    margin: float = 0.03

    def __post_init__(self):
        if self.margin < 0.0:
            raise ValueError("required stability margin must be >= 0")


ARMS_BACK = StabilityModel(com_x=-0.10)


@dataclass(frozen=True)
class Keyframe:
    """One whole-body pose: base (x, y, z, roll, pitch, yaw), four feet in
    world xyz, per-foot contact flags, and the velocity/acceleration limits
    that govern the transition arriving at this frame."""

    base: tuple
    feet: tuple
    contacts: tuple
    vmax: float = DEFAULT_VMAX
    amax: float = DEFAULT_AMAX


@dataclass
class MotionSequence:
    keyframes: list
    annotations: list  # one of ANNOTATIONS per transition

    def to_doc(self) -> dict:
        return {
            "keyframes": [
                {
                    "base": dict(zip(("x", "y", "z", "r", "p", "yaw"), kf.base)),
                    "feet": [list(f) for f in kf.feet],
                    "contacts": list(kf.contacts),
                    "vmax": kf.vmax,
                    "amax": kf.amax,
                }
                for kf in self.keyframes
            ],
            "annotations": list(self.annotations),
        }


def sequence_from_doc(doc: dict) -> MotionSequence:
    frames = [
        Keyframe(
            tuple(k["base"][n] for n in ("x", "y", "z", "r", "p", "yaw")),
            tuple(tuple(f) for f in k["feet"]),
            tuple(bool(c) for c in k["contacts"]),
            float(k["vmax"]),
            float(k["amax"]),
        )
        for k in doc["keyframes"]
    ]
    return MotionSequence(frames, list(doc["annotations"]))


# -- static stability -------------------------------------------------------


# support polygon geometry lives in robot; re-exported for callers here
_convex_hull = robot.convex_hull
_seg_dist = robot._seg_dist
support_margin = robot.support_margin


def _com_world(kf: Keyframe, stability: StabilityModel) -> tuple:
    x, y, z, roll, pitch, yaw = kf.base
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    # R = Rz(yaw) Ry(pitch) Rx(roll) applied to the base-frame CoM
    lx, ly, lz = stability.com_x, 0.0, stability.com_z
    bx = cp * lx + sp * (sr * ly + cr * lz)
    by = cr * ly - sr * lz
    bz = -sp * lx + cp * (sr * ly + cr * lz)
    wx = x + cy * bx - sy * by
    wy = y + sy * bx + cy * by
    return wx, wy, z + bz


def is_statically_stable(kf: Keyframe, stability: StabilityModel) -> tuple:
    """(stable, margin).  Stable needs at least three contact feet and the
    CoM ground projection at least the required margin inside their hull."""
    support = [kf.feet[i][:2] for i in range(robot.N_FEET) if kf.contacts[i]]
    if not support:
        raise ValueError("stability needs at least one contact foot")
    cx, cy, _ = _com_world(kf, stability)
    margin = support_margin((cx, cy), support)
    return (len(support) >= 3 and margin >= stability.margin, margin)


# -- plan expansion ---------------------------------------------------------


def _terrain_z(stack: CostStack, x: float, y: float) -> float:
    z = stack.maps[1].height_at(x, y)
    if math.isnan(z) or math.isinf(z):
        raise ExpansionError(f"foot placed on unknown terrain at ({x:.3f}, {y:.3f})")
    return z


def _fit_pitch(offsets: tuple, fz: list) -> float:
    """Base pitch that tracks the stance's longitudinal terrain slope
    (least squares over the four feet), clamped to the attitude envelope."""
    lx = [robot.NEUTRAL_FEET[i][0] + offsets[i] for i in range(4)]
    mx = sum(lx) / 4.0
    mz = sum(fz) / 4.0
    var = sum((v - mx) ** 2 for v in lx)
    if var <= 0.0:
        return 0.0
    slope = sum((v - mx) * (z - mz) for v, z in zip(lx, fz)) / var
    return max(-ATTITUDE_MAX, min(ATTITUDE_MAX, -math.atan(slope)))


def _stance_keyframe(stack: CostStack, st) -> Keyframe:
    bx, by = stack.base_world(1, st.col, st.row)
    yaw = stack.yaw_of(1, st.orient)
    offsets = st.offsets4_m()
    feet_xy = robot.foot_points(bx, by, yaw, offsets)
    fz = [_terrain_z(stack, fx, fy) for fx, fy in feet_xy]
    base_z = sum(fz) / 4.0 + robot.CLEARANCE_HEIGHT
    feet = tuple((fx, fy, z) for (fx, fy), z in zip(feet_xy, fz))
    kf = Keyframe((bx, by, base_z, 0.0, _fit_pitch(offsets, fz), yaw), feet, (True,) * 4)
    if _workspace_violation(kf) is None:
        return kf
    # slope-tracking pitch can under- or overshoot a stretched stance; take
    # the mildest attitude that fits every leg
    for decideg in range(0, int(round(math.degrees(ATTITUDE_MAX) * 10)) + 1):
        for sgn in (-1.0, 1.0):
            cand = Keyframe(
                (bx, by, base_z, 0.0, sgn * math.radians(decideg / 10.0), yaw),
                feet,
                (True,) * 4,
            )
            if _workspace_violation(cand) is None:
                return cand
    raise ExpansionError(_workspace_violation(kf))


def _chord_max_z(stack: CostStack, p0: tuple, p1: tuple) -> float:
    step = stack.maps[1].resolution * 0.5
    dist = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
    n = max(1, int(math.ceil(dist / step)))
    top = -math.inf
    for k in range(n + 1):
        t = k / n
        z = stack.maps[1].height_at(p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1]))
        if not math.isnan(z) and z > top:
            top = z
    return top


def _hip_world(base: tuple, i: int) -> tuple:
    x, y, z, roll, pitch, yaw = base
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    hx, hy = robot.HIP_CORNERS[i]
    # R = Rz Ry Rx applied to the hip corner (hip z = 0 in base frame)
    bx = cp * hx + sp * sr * hy
    by = cr * hy
    bz = -sp * hx + cp * sr * hy
    return x + cy * bx - sy * by, y + sy * bx + cy * by, z + bz


def _workspace_violation(kf: Keyframe) -> str | None:
    for i in range(robot.N_FEET):
        wx, wy, wz = _hip_world(kf.base, i)
        fx, fy, fz = kf.feet[i]
        d = math.sqrt((fx - wx) ** 2 + (fy - wy) ** 2 + (fz - wz) ** 2)
        if not (robot.LEG_REACH_MIN - 1e-9 <= d <= robot.LEG_REACH_MAX + 1e-9):
            return f"foot {robot.FOOT_NAMES[i]} leaves the leg workspace (hip distance {d:.3f} m)"
    return None


def _check_workspace(kf: Keyframe) -> None:
    why = _workspace_violation(kf)
    if why:
        raise ExpansionError(why)


def _expand_step(
    stack: CostStack, prev: Keyframe, st_to, foot: int, stability: StabilityModel
) -> tuple:
    """Five keyframes for one stepping maneuver: stabilize, lift, carry,
    lower, restore.  The stabilizing pose is the smallest simultaneous base
    shift + roll (one blend parameter) that puts the CoM the required margin
    inside the remaining three feet while every phase keeps all legs in the
    workspace."""
    bx, by = stack.base_world(1, st_to.col, st_to.row)
    yaw = stack.yaw_of(1, st_to.orient)
    land_xy = robot.foot_points(bx, by, yaw, st_to.offsets4_m())[foot]
    from_xyz = prev.feet[foot]
    land_z = _terrain_z(stack, *land_xy)
    carry_z = (
        max(_chord_max_z(stack, from_xyz[:2], land_xy), from_xyz[2], land_z)
        + LIFT_CLEARANCE
    )

    x, y, z, _, pitch0, yaw0 = prev.base
    cy0, sy0 = math.cos(yaw0), math.sin(yaw0)
    # shift opposes the stepping foot's corner; roll tips the base away from it
    sx_dir = -math.copysign(1.0, robot.NEUTRAL_FEET[foot][0]) * SHIFT_CAP
    roll_dir = math.copysign(1.0, robot.NEUTRAL_FEET[foot][1]) * ROLL_CAP
    support = [prev.feet[i][:2] for i in range(robot.N_FEET) if i != foot]

    def foot_at(base: tuple, xyz: tuple, contact: bool) -> Keyframe:
        feet = tuple(xyz if i == foot else prev.feet[i] for i in range(4))
        flags = tuple(contact if i == foot else True for i in range(4))
        return Keyframe(base, feet, flags, prev.vmax, prev.amax)

    last_block = "CoM margin unsatisfied within the shift/roll budget"
    for k in range(65):
        t = k / 64.0
        # crouching trades leg extension for reach; planar CoM is unaffected,
        # so try the upright posture first and sink only when reach binds
        for crouch in CROUCH_STEPS:
            base_t = (
                x + cy0 * sx_dir * t,
                y + sy0 * sx_dir * t,
                z - crouch,
                roll_dir * t,
                pitch0,
                yaw0,
            )
            braced = Keyframe(base_t, prev.feet, prev.contacts, prev.vmax, prev.amax)
            px, py, _ = _com_world(braced, stability)
            if support_margin((px, py), support) < stability.margin:
                break
            lifted = foot_at(base_t, (from_xyz[0], from_xyz[1], carry_z), False)
            carried = foot_at(base_t, (land_xy[0], land_xy[1], carry_z), False)
            landed = foot_at(base_t, (land_xy[0], land_xy[1], land_z), True)
            why = None
            for kf in (braced, lifted, carried, landed):
                why = _workspace_violation(kf)
                if why:
                    break
            if why:
                last_block = why
                continue
            restored = _stance_keyframe(stack, st_to)
            phases = [
                (braced, "base-move"),
                (lifted, "leg-move"),
                (carried, "leg-move"),
                (landed, "leg-move"),
                (restored, "base-move"),
            ]
            # a step that needs no brace produces identity frames at both
            # ends; drop them so every transition carries real motion
            out = []
            ref = prev
            for kf, ann in phases:
                if (kf.base, kf.feet, kf.contacts) != (ref.base, ref.feet, ref.contacts):
                    out.append((kf, ann))
                    ref = kf
            return tuple(out)
    raise ExpansionError(
        f"no stable support posture for foot {robot.FOOT_NAMES[foot]}: {last_block}"
    )


_SINGLE_FRAME_KINDS = {
    "drive": "drive",
    "turn": "drive",
    "shift_foot": "leg-move",
    "foot_to_neutral": "leg-move",
    "shift_base": "base-move",
}


def expand_path(plan: PathPlan, stack: CostStack, stability: StabilityModel) -> MotionSequence:
    """Expand a fine-level plan into a stable keyframe sequence.

    Driving and rolling-stance maneuvers become single keyframes; each step
    becomes the five-phase stabilized sub-sequence.  Every emitted frame must
    pass is_statically_stable and keep all feet inside the leg workspace."""
    for st in plan.states:
        if st.level != 1:
            raise ExpansionError(
                "plan has coarse-level segments; refine them before expansion"
            )
    frames = [_stance_keyframe(stack, plan.states[0])]
    annotations: list = []
    for st2, man in zip(plan.states[1:], plan.maneuvers):
        if man.kind == "step":
            for kf, ann in _expand_step(
                stack, frames[-1], st2, int(man.params["foot"]), stability
            ):
                frames.append(kf)
                annotations.append(ann)
        elif man.kind in _SINGLE_FRAME_KINDS:
            frames.append(_stance_keyframe(stack, st2))
            annotations.append(_SINGLE_FRAME_KINDS[man.kind])
        else:
            raise ExpansionError(f"cannot expand maneuver kind {man.kind!r}")
    for kf in frames:
        _check_workspace(kf)
        stable, margin = is_statically_stable(kf, stability)
        if not stable:
            raise ExpansionError(
                f"expanded keyframe unstable (margin {margin:.3f} m, "
                f"required {stability.margin:.3f})"
            )
    return MotionSequence(frames, annotations)


def verify_sequence(seq: MotionSequence, stability: StabilityModel) -> None:
    """Re-check the MotionSequence invariants from scratch: each transition
    changes exactly its annotated category and every frame is stable."""
    if len(seq.annotations) != len(seq.keyframes) - 1:
        raise ValueError("annotation count must be keyframe count - 1")
    for kf in seq.keyframes:
        stable, margin = is_statically_stable(kf, stability)
        if not stable:
            raise ValueError(f"unstable keyframe (margin {margin:.4f})")
        if abs(kf.base[3]) > ATTITUDE_MAX + 1e-9 or abs(kf.base[4]) > ATTITUDE_MAX + 1e-9:
            raise ValueError("keyframe attitude exceeds the roll/pitch limit")
    for a, b, ann in zip(seq.keyframes, seq.keyframes[1:], seq.annotations):
        base_moved = any(abs(p - q) > 1e-12 for p, q in zip(a.base, b.base))
        feet_moved = [
            i
            for i in range(robot.N_FEET)
            if any(abs(p - q) > 1e-12 for p, q in zip(a.feet[i], b.feet[i]))
            or a.contacts[i] != b.contacts[i]
        ]
        if ann == "drive":
            ok = base_moved and all(a.contacts) and all(b.contacts)
        elif ann == "leg-move":
            ok = not base_moved and len(feet_moved) == 1
        elif ann == "base-move":
            ok = base_moved and not feet_moved
        else:
            raise ValueError(f"unknown annotation {ann!r}")
        if not ok:
            raise ValueError(f"transition does not match its {ann!r} annotation")


# -- interpolation ----------------------------------------------------------


@dataclass
class TimedTrajectory:
    """Fixed-rate samples of the interpolated sequence.  durations holds the
    exact per-transition profile times; the sample grid pads each transition
    to a whole number of ticks (the pose dwells at the endpoint)."""

    t: np.ndarray
    base: np.ndarray      # (N, 6)
    feet: np.ndarray      # (N, 4, 3)
    contacts: np.ndarray  # (N, 4) bool
    seg_of: np.ndarray    # (N,) index of the transition owning each sample
    durations: tuple
    dt: float

    @property
    def duration(self) -> float:
        return float(sum(self.durations))

    def pose_at(self, idx: int) -> tuple:
        x, y, _, _, _, yaw = self.base[idx]
        return float(x), float(y), float(yaw)


def _profile_distance(tt: float, L: float, v: float, a: float) -> float:
    """Distance along a trapezoidal (or triangular) speed profile at time tt."""
    if L <= 0.0:
        return 0.0
    if L >= v * v / a:
        t1 = v / a
        T = L / v + v / a
        if tt >= T:
            return L
        if tt < t1:
            return 0.5 * a * tt * tt
        if tt <= T - t1:
            return 0.5 * a * t1 * t1 + v * (tt - t1)
        return L - 0.5 * a * (T - tt) * (T - tt)
    tp = math.sqrt(L / a)
    T = 2.0 * tp
    if tt >= T:
        return L
    if tt < tp:
        return 0.5 * a * tt * tt
    return L - 0.5 * a * (T - tt) * (T - tt)


def transition_duration(L: float, v: float, a: float) -> float:
    if v <= 0.0 or a <= 0.0:
        raise ValueError("velocity and acceleration limits must be positive")
    if L <= 0.0:
        return 0.0
    if L >= v * v / a:
        return L / v + v / a
    return 2.0 * math.sqrt(L / a)


def _transition_length(a: Keyframe, b: Keyframe) -> float:
    """Cartesian length governing the speed profile: the largest displacement
    among the base and the four feet (the fastest-moving body point)."""
    d = math.sqrt(sum((b.base[k] - a.base[k]) ** 2 for k in range(3)))
    for i in range(robot.N_FEET):
        d = max(
            d,
            math.sqrt(sum((b.feet[i][k] - a.feet[i][k]) ** 2 for k in range(3))),
        )
    return d


def interpolate(seq: MotionSequence, dt: float = 0.02) -> TimedTrajectory:
    """Sample the sequence at fixed dt.  Each transition runs a straight
    Cartesian blend under a trapezoidal speed profile at the destination
    keyframe's limits; sampled speeds and accelerations never exceed them."""
    frames = seq.keyframes
    if not frames:
        raise ValueError("empty sequence")
    t_rows = [0.0]
    base_rows = [list(frames[0].base)]
    feet_rows = [np.asarray(frames[0].feet, dtype=float)]
    contact_rows = [list(frames[0].contacts)]
    seg_rows = [0]
    durations = []
    now = 0.0
    for si, (a, b) in enumerate(zip(frames, frames[1:])):
        v, acc = b.vmax, b.amax
        L = _transition_length(a, b)
        T = transition_duration(L, v, acc)
        durations.append(T)
        n = int(math.ceil(T / dt - 1e-9))
        pa, pb = np.asarray(a.base, dtype=float), np.asarray(b.base, dtype=float)
        d_base = pb - pa
        for k in (3, 4, 5):
            d_base[k] = robot.wrap_angle(d_base[k])
        fa = np.asarray(a.feet, dtype=float)
        fb = np.asarray(b.feet, dtype=float)
        both = [a.contacts[i] and b.contacts[i] for i in range(4)]
        for k in range(1, n + 1):
            frac = _profile_distance(k * dt, L, v, acc) / L if L > 0.0 else 1.0
            t_rows.append(now + k * dt)
            base_rows.append(list(pa + frac * d_base))
            feet_rows.append(fa + frac * (fb - fa))
            contact_rows.append(list(b.contacts) if k == n else both)
            seg_rows.append(si)
        now += n * dt
        if n == 0:
            # motionless transition (e.g. contact flag only): fold its end
            # state into the sample already on the grid
            contact_rows[-1] = list(b.contacts)
    base_arr = np.asarray(base_rows)
    for k in (3, 4, 5):
        base_arr[:, k] = np.unwrap(base_arr[:, k])
    return TimedTrajectory(
        np.asarray(t_rows),
        base_arr,
        np.stack(feet_rows),
        np.asarray(contact_rows, dtype=bool),
        np.asarray(seg_rows, dtype=int),
        tuple(durations),
        dt,
    )
