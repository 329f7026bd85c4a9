"""Quasi-static 2.5D simulator: one box, four walls, a finger-tip end effector.

Contact is a penalty spring between the commanded finger tip and the object
surface, measured along the end effector's forward (push) axis.  A free object
slides with the contact point once the spring force exceeds Coulomb friction;
an object flush against a wall instead pivots about its wall-side bottom edge
whenever the push torque beats gravity.  All state objects are plain values:
every public operation copies its input and returns a fresh state.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .config import WORKSPACE_SIZE, DomainRandomizationSpec, PhysicsParams

HALF_PI = 0.5 * math.pi

# Outward wall normals (pointing from the interior into the wall) and the wall
# plane offsets: a point P is inside iff dot(n_k, P) <= offset_k for every k.
WALL_NORMALS = ((-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0))
WALL_OFFSETS = (0.0, WORKSPACE_SIZE, 0.0, WORKSPACE_SIZE)
HOME_POSE = (0.02, 0.02, 0.30, 0.0, 0.0)
REACH_MARGIN = 0.10


class SimError(RuntimeError):
    pass


@dataclass
class ObjectState:
    x: float
    y: float
    yaw: float
    dims: tuple[float, float, float]  # length, width, height (intrinsic)
    mass: float
    friction_mu: float
    pitch: float = 0.0
    resting_face: str = "flat"
    # body-frame extents in the current resting configuration: along the yaw
    # axis, across it, vertical
    extent: tuple[float, float, float] | None = None
    tilt_wall: int | None = None  # wall the object is pivoting against
    lift: float = 0.0  # height of the object bottom above the floor

    def __post_init__(self):
        if self.extent is None:
            self.extent = tuple(self.dims)

    @property
    def pose_2d(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.yaw)


@dataclass
class EndEffectorState:
    x: float
    y: float
    z: float
    yaw: float = 0.0
    pitch_y: float = 0.0
    gripper: str = "closed"
    max_opening: float = 0.08

    @property
    def pose(self) -> tuple[float, float, float, float, float]:
        return (self.x, self.y, self.z, self.yaw, self.pitch_y)


@dataclass
class WorkspaceState:
    object: ObjectState
    ee: EndEffectorState
    held: bool = False
    size: float = WORKSPACE_SIZE

    @property
    def walls(self) -> list[tuple[tuple[float, float], tuple[float, float]]]:
        s = self.size
        return [((0, 0), (0, s)), ((s, 0), (s, s)), ((0, 0), (s, 0)), ((0, s), (s, s))]

    def copy(self) -> "WorkspaceState":
        return copy.deepcopy(self)


@dataclass
class ContactReading:
    f_d: float = 0.0
    f_max: float = 0.0
    f_current: float = 0.0


# ---------------------------------------------------------------------------
# geometry helpers


def body_axes(yaw: float):
    c, s = math.cos(yaw), math.sin(yaw)
    return (c, s), (-s, c)


def footprint_corners(obj: ObjectState) -> np.ndarray:
    """Corners of the resting footprint rectangle, shape (4, 2)."""
    (ux, uy), (vx, vy) = body_axes(obj.yaw)
    hx, hy = 0.5 * obj.extent[0], 0.5 * obj.extent[1]
    out = np.empty((4, 2))
    for k, (sx, sy) in enumerate(((1, 1), (-1, 1), (-1, -1), (1, -1))):
        out[k, 0] = obj.x + sx * hx * ux + sy * hy * vx
        out[k, 1] = obj.y + sx * hx * uy + sy * hy * vy
    return out


def wall_gaps(obj: ObjectState) -> list[float]:
    """Signed clearance between the footprint and each wall (negative = penetrating)."""
    corners = footprint_corners(obj)
    gaps = []
    for (nx, ny), off in zip(WALL_NORMALS, WALL_OFFSETS):
        gaps.append(off - float(np.max(corners[:, 0] * nx + corners[:, 1] * ny)))
    return gaps


def min_wall_distance(obj: ObjectState) -> float:
    return min(wall_gaps(obj))


def _aligned_axis(obj: ObjectState, wall: int) -> int | None:
    """0 if the body x-axis is normal to ``wall``, 1 for the y-axis, else None."""
    (ux, uy), (vx, vy) = body_axes(obj.yaw)
    nx, ny = WALL_NORMALS[wall]
    if abs(ux * nx + uy * ny) > 1 - 1e-9:
        return 0
    if abs(vx * nx + vy * ny) > 1 - 1e-9:
        return 1
    return None


def flush_wall(obj: ObjectState, tol: float = 1e-7) -> int | None:
    """Index of a wall the flat object lies flush against, if any."""
    gaps = wall_gaps(obj)
    for k in range(4):
        if gaps[k] <= tol and _aligned_axis(obj, k) is not None:
            return k
    return None


@dataclass
class PivotFrame:
    """Object geometry seen in the vertical plane normal to a wall.

    ``s`` runs along the wall normal (towards the wall) measured from the
    resting object center, ``t`` runs along the wall.  The object spans
    ``a`` along s, ``b`` along t and ``h`` vertically; the wall sits at
    s = a / 2.
    """

    cx: float
    cy: float
    n: tuple[float, float]
    a: float
    b: float
    h: float

    @property
    def t_axis(self) -> tuple[float, float]:
        return (-self.n[1], self.n[0])

    def to_st(self, px: float, py: float) -> tuple[float, float]:
        dx, dy = px - self.cx, py - self.cy
        tx, ty = self.t_axis
        return dx * self.n[0] + dy * self.n[1], dx * tx + dy * ty

    def corners(self, pitch: float) -> list[tuple[float, float]]:
        """(s, z) corners in order pivot, far-top, near-top, near-bottom."""
        a, h = self.a, self.h
        sp, cp = math.sin(pitch), math.cos(pitch)
        s0 = 0.5 * a - h * sp  # pivot edge slides back so the far-top corner stays on the wall
        return [
            (s0, 0.0),
            (s0 + h * sp, h * cp),
            (s0 - a * cp + h * sp, a * sp + h * cp),
            (s0 - a * cp, a * sp),
        ]


def pivot_frame(obj: ObjectState, wall: int) -> PivotFrame:
    axis = _aligned_axis(obj, wall)
    if axis is None:
        raise SimError("object is not aligned with the pivot wall")
    ex, ey, ez = obj.extent
    a, b = (ex, ey) if axis == 0 else (ey, ex)
    return PivotFrame(obj.x, obj.y, WALL_NORMALS[wall], a, b, ez)


def chord(poly: list[tuple[float, float]], z: float) -> tuple[float, float] | None:
    """Horizontal extent of a convex (s, z) polygon at height z."""
    lo, hi = math.inf, -math.inf
    n = len(poly)
    for k in range(n):
        s1, z1 = poly[k]
        s2, z2 = poly[(k + 1) % n]
        if (z1 - z) * (z2 - z) > 0:
            continue
        if z1 == z2:
            for s in (s1, s2):
                lo, hi = min(lo, s), max(hi, s)
            continue
        s = s1 + (z - z1) * (s2 - s1) / (z2 - z1)
        lo, hi = min(lo, s), max(hi, s)
    if lo > hi:
        return None
    return lo, hi


def balance_angle(a: float, h: float) -> float:
    """Pitch at which the center of mass passes over the pivot edge."""
    return math.atan2(a, h)


def gravity_torque(mass: float, g: float, a: float, h: float, pitch: float) -> float:
    """Restoring torque about the pivot edge; negative past the balance angle."""
    return mass * g * (0.5 * a * math.cos(pitch) - 0.5 * h * math.sin(pitch))


def surface_height(obj: ObjectState, px, py):
    """Top-surface height of the object above the floor at workspace points.

    Accepts scalars or numpy arrays; returns 0 where the object is absent.
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    if obj.tilt_wall is not None and obj.pitch > 0:
        fr = pivot_frame(obj, obj.tilt_wall)
        tx, ty = fr.t_axis
        dx, dy = px - fr.cx, py - fr.cy
        s = dx * fr.n[0] + dy * fr.n[1]
        t = dx * tx + dy * ty
        piv, ft, nt, nb = fr.corners(obj.pitch)
        xs = [nb[0], nt[0], ft[0]]
        zs = [nb[1], nt[1], ft[1]]
        top = np.interp(s, xs, zs, left=0.0, right=0.0)
        inside = (np.abs(t) <= 0.5 * fr.b) & (s >= nb[0]) & (s <= ft[0])
        return np.where(inside, top + obj.lift, 0.0)
    (ux, uy), (vx, vy) = body_axes(obj.yaw)
    dx, dy = px - obj.x, py - obj.y
    bu = dx * ux + dy * uy
    bv = dx * vx + dy * vy
    inside = (np.abs(bu) <= 0.5 * obj.extent[0]) & (np.abs(bv) <= 0.5 * obj.extent[1])
    return np.where(inside, obj.extent[2] + obj.lift, 0.0)


def tip_position(ee: EndEffectorState, finger_length: float) -> tuple[float, float, float]:
    """Finger tip location: pitching swings the tip about a wrist above it."""
    sp = math.sin(ee.pitch_y)
    return (
        ee.x + finger_length * sp * math.cos(ee.yaw),
        ee.y + finger_length * sp * math.sin(ee.yaw),
        ee.z + finger_length * (1.0 - math.cos(ee.pitch_y)),
    )


def _box_penetration(obj: ObjectState, tip, d) -> tuple[float, tuple[float, float]]:
    """Depth of the tip inside the resting box, measured back along -d.

    Returns (depth, entry point).  Zero when the tip is outside the box or the
    ray from the tip backwards does not cross the box first.
    """
    tx, ty, tz = tip
    if tz < obj.lift or tz > obj.lift + obj.extent[2]:
        return 0.0, (tx, ty)
    (ux, uy), (vx, vy) = body_axes(obj.yaw)
    px, py = tx - obj.x, ty - obj.y
    p = (px * ux + py * uy, px * vx + py * vy)
    dd = (d[0] * ux + d[1] * uy, d[0] * vx + d[1] * vy)
    half = (0.5 * obj.extent[0], 0.5 * obj.extent[1])
    t_in, t_out = -math.inf, math.inf
    for k in range(2):
        if abs(dd[k]) < 1e-12:
            if abs(p[k]) > half[k]:
                return 0.0, (tx, ty)
            continue
        t1 = (-half[k] - p[k]) / dd[k]
        t2 = (half[k] - p[k]) / dd[k]
        t_in = max(t_in, min(t1, t2))
        t_out = min(t_out, max(t1, t2))
    if t_in > t_out or t_in > 0 or t_out < 0:
        return 0.0, (tx, ty)
    return -t_in, (tx + t_in * d[0], ty + t_in * d[1])


# ---------------------------------------------------------------------------


class Simulator:
    """Stateless physics engine; all state travels in :class:`WorkspaceState`."""

    def __init__(self, params: PhysicsParams | None = None):
        self.p = params or PhysicsParams()

    # -- scene construction --------------------------------------------------

    def reset(self, rand_spec: DomainRandomizationSpec, placement: str = "random",
              seed: int = 0) -> WorkspaceState:
        rand_spec.validate()
        rng = np.random.default_rng(seed)
        r = rand_spec.ranges()
        dims = tuple(float(rng.uniform(*r[k])) for k in ("length", "width", "height"))
        mass = float(rng.uniform(*r["mass"]))
        mu = float(rng.uniform(*r["mu"]))
        ee = EndEffectorState(*HOME_POSE, gripper="closed", max_opening=self.p.max_opening)
        for _ in range(1000):
            obj = self._sample_pose(rng, dims, mass, mu, placement)
            if obj is not None:
                return WorkspaceState(obj, ee)
        raise SimError("unplaceable")

    def _sample_pose(self, rng, dims, mass, mu, placement) -> ObjectState | None:
        if placement == "random":
            margin = 0.03
            yaw = float(rng.uniform(0.0, math.pi))
            x, y = (float(v) for v in rng.uniform(0.0, WORKSPACE_SIZE, size=2))
            obj = ObjectState(x, y, yaw, dims, mass, mu)
            return obj if min_wall_distance(obj) >= margin else None
        if placement == "close_to_wall":
            wall = int(rng.integers(4))
            axis = int(rng.integers(2))
            jitter = math.radians(float(rng.uniform(-10.0, 10.0)))
            gap = float(rng.uniform(0.0, 0.01))
            offset = float(rng.uniform(-0.5, 0.5))
            obj = place_against_wall(dims, mass, mu, wall, axis, offset, gap, jitter)
            return obj if obj is not None and min_wall_distance(obj) >= -1e-12 else None
        raise SimError(f"unknown placement {placement!r}")

    # -- motion --------------------------------------------------------------

    def step_ee(self, state: WorkspaceState, displacement) -> tuple[WorkspaceState, ContactReading]:
        """Move the end effector by (dx, dy, dz, dyaw, dpitch) through the scene."""
        disp = [float(v) for v in displacement]
        if len(disp) != 5 or not all(math.isfinite(v) for v in disp):
            raise SimError("displacement must be 5 finite numbers")
        st = state.copy()
        p = self.p
        lin = math.sqrt(disp[0] ** 2 + disp[1] ** 2 + disp[2] ** 2)
        ang = p.finger_length * (abs(disp[4]) + abs(disp[3]))
        n = max(1, math.ceil(max(lin, ang) / p.substep_len - 1e-9))
        reading = ContactReading()
        for _ in range(n):
            ee = st.ee
            ee.x = min(max(ee.x + disp[0] / n, -REACH_MARGIN), WORKSPACE_SIZE + REACH_MARGIN)
            ee.y = min(max(ee.y + disp[1] / n, -REACH_MARGIN), WORKSPACE_SIZE + REACH_MARGIN)
            ee.z = min(max(ee.z + disp[2] / n, 0.0), 0.5)
            ee.yaw += disp[3] / n
            ee.pitch_y = min(max(ee.pitch_y + disp[4] / n, -HALF_PI / 2), HALF_PI / 2)
            f_obj, toppled = self._resolve_contact(st)
            f_wall, f_wall_d = self._wall_force(st)
            f = min(f_obj + f_wall, p.contact_force_cap)
            reading.f_current = f
            reading.f_d = min(f_obj + f_wall_d, p.contact_force_cap) if f > 0 else 0.0
            reading.f_d = max(reading.f_d, 0.0)
            reading.f_max = max(reading.f_max, f)
            if toppled:
                break  # the object fell away from the finger; motion is truncated
        return st, reading

    def _wall_force(self, st: WorkspaceState) -> tuple[float, float]:
        tip = tip_position(st.ee, self.p.finger_length)
        dx, dy = math.cos(st.ee.yaw), math.sin(st.ee.yaw)
        total = along = 0.0
        for (nx, ny), off in zip(WALL_NORMALS, WALL_OFFSETS):
            pen = tip[0] * nx + tip[1] * ny - off
            if pen > 0:
                f = self.p.contact_stiffness * pen
                total += f
                along += f * (nx * dx + ny * dy)
        return total, along

    def _resolve_contact(self, st: WorkspaceState) -> tuple[float, bool]:
        """Update the object for the current tip pose; return (force, toppled)."""
        obj = st.object
        if st.held:
            return 0.0, False
        p = self.p
        k = p.contact_stiffness
        tip = tip_position(st.ee, p.finger_length)
        d = (math.cos(st.ee.yaw), math.sin(st.ee.yaw))

        if obj.tilt_wall is not None:
            return self._pivot(obj, obj.tilt_wall, tip, d)

        depth, contact = _box_penetration(obj, tip, d)
        if depth <= 0:
            return 0.0, False
        slack = obj.friction_mu * obj.mass * p.gravity / k
        if depth > slack:
            self._slide(obj, depth - slack, contact, d)
            depth, contact = _box_penetration(obj, tip, d)
        if obj.resting_face == "flat":
            wall = flush_wall(obj)
            if wall is not None:
                n = WALL_NORMALS[wall]
                if n[0] * d[0] + n[1] * d[1] >= math.cos(math.pi / 4):
                    return self._pivot(obj, wall, tip, d)
        return min(k * depth, p.contact_force_cap), False

    def _slide(self, obj: ObjectState, dist: float, contact, d) -> None:
        """Kinematic push: translate with the contact point, rotate by the lever arm."""
        ex, ey = obj.extent[0], obj.extent[1]
        rx, ry = contact[0] - obj.x, contact[1] - obj.y
        lever = rx * d[1] - ry * d[0]
        gyr2 = (ex * ex + ey * ey) / 12.0
        obj.x += dist * d[0]
        obj.y += dist * d[1]
        obj.yaw += self.p.push_compliance * dist * lever / gyr2
        touched = self._project_out_of_walls(obj)
        for wall in touched:
            n = WALL_NORMALS[wall]
            if n[0] * d[0] + n[1] * d[1] > 0.3:
                self._align_flush(obj, wall)
        obj.yaw = math.remainder(obj.yaw, 2 * math.pi)

    def _project_out_of_walls(self, obj: ObjectState) -> list[int]:
        touched = []
        for _ in range(3):
            gaps = wall_gaps(obj)
            moved = False
            for wall, gap in enumerate(gaps):
                if gap < 0:
                    nx, ny = WALL_NORMALS[wall]
                    obj.x += gap * nx
                    obj.y += gap * ny
                    moved = True
                if gap <= 1e-12 and wall not in touched:
                    touched.append(wall)
            if not moved:
                break
        # snap exactly onto touched walls so flush tests are robust
        for wall in touched:
            gap = wall_gaps(obj)[wall]
            if abs(gap) < 1e-9:
                nx, ny = WALL_NORMALS[wall]
                obj.x += gap * nx
                obj.y += gap * ny
        return touched

    def _align_flush(self, obj: ObjectState, wall: int) -> None:
        nx, ny = WALL_NORMALS[wall]
        obj.yaw += math.remainder(math.atan2(ny, nx) - obj.yaw, HALF_PI)
        self._project_out_of_walls(obj)
        gaps = wall_gaps(obj)
        if gaps[wall] > 0:
            obj.x += gaps[wall] * nx
            obj.y += gaps[wall] * ny

    def _pivot(self, obj: ObjectState, wall: int, tip, d) -> tuple[float, bool]:
        """Quasi-static pivot about the wall-side bottom edge."""
        p = self.p
        k = p.contact_stiffness
        fr = pivot_frame(obj, wall)
        s_t, t_t = fr.to_st(tip[0], tip[1])
        z_t = tip[2]
        cos_a = fr.n[0] * d[0] + fr.n[1] * d[1]

        def depth_at(pitch: float) -> float:
            if abs(t_t) > 0.5 * fr.b or cos_a <= 0:
                return 0.0
            c = chord(fr.corners(pitch), z_t)
            if c is None or s_t < c[0] or s_t > c[1]:
                return 0.0
            return (s_t - c[0]) / cos_a

        def push_torque(depth: float) -> float:
            return min(k * depth, p.contact_force_cap) * cos_a * z_t

        pitch = obj.pitch
        depth = depth_at(pitch)
        if depth <= 0:
            # contact lost: an unsupported partial pivot falls back flat
            if obj.tilt_wall is not None:
                obj.pitch = 0.0
                obj.tilt_wall = None
            return 0.0, False

        theta_b = balance_angle(fr.a, fr.h)
        step = math.radians(p.pivot_resolution_deg)
        g = p.gravity
        while pitch < theta_b:
            nxt = min(pitch + step, theta_b)
            dn = depth_at(nxt)
            if dn <= 0 or push_torque(dn) <= gravity_torque(obj.mass, g, fr.a, fr.h, nxt):
                break
            pitch, depth = nxt, dn
        if pitch >= theta_b:
            force = min(k * depth, p.contact_force_cap)
            self._topple(obj, wall)
            return force, True
        if pitch > 0:
            obj.pitch = pitch
            obj.tilt_wall = wall
        return min(k * depth, p.contact_force_cap), False

    def _topple(self, obj: ObjectState, wall: int) -> None:
        """Replace a tilted flat box by the same box standing against ``wall``."""
        fr = pivot_frame(obj, wall)
        axis = _aligned_axis(obj, wall)
        ex, ey, ez = obj.extent
        shift = 0.5 * fr.a - 0.5 * fr.h
        obj.x += shift * fr.n[0]
        obj.y += shift * fr.n[1]
        obj.extent = (ez, ey, ex) if axis == 0 else (ex, ez, ey)
        obj.pitch = HALF_PI
        obj.resting_face = "standing"
        obj.tilt_wall = None
        self._project_out_of_walls(obj)

    # -- relaxation and predicates -------------------------------------------

    def settle(self, state: WorkspaceState) -> WorkspaceState:
        st = state.copy()
        obj = st.object
        if st.held:
            return st
        tol = self.p.settle_tolerance
        if obj.tilt_wall is not None and obj.pitch > tol:
            fr = pivot_frame(obj, obj.tilt_wall)
            if obj.pitch > balance_angle(fr.a, fr.h):
                self._topple(obj, obj.tilt_wall)
            else:
                obj.pitch = 0.0
                obj.tilt_wall = None
        elif obj.resting_face == "flat":
            obj.pitch = 0.0
            obj.tilt_wall = None
        self._project_out_of_walls(obj)
        obj.lift = 0.0
        return st

    def set_pitch(self, state: WorkspaceState, wall: int, pitch: float) -> WorkspaceState:
        """Test/analysis helper: tilt a flush flat object to ``pitch`` against ``wall``."""
        st = state.copy()
        if flush_wall(st.object) != wall and _aligned_axis(st.object, wall) is None:
            raise SimError("object is not flush against the requested wall")
        st.object.pitch = float(pitch)
        st.object.tilt_wall = wall if pitch > 0 else None
        return st

    def check_flip_success(self, before: WorkspaceState, after: WorkspaceState) -> bool:
        return before.object.resting_face == "flat" and after.object.resting_face == "standing"

    def near_wall(self, state: WorkspaceState) -> bool:
        return min_wall_distance(state.object) <= self.p.wall_delta

    def check_push_success(self, before: WorkspaceState, after: WorkspaceState) -> str:
        if self.near_wall(after) and not self.near_wall(before):
            return "at_wall"
        a, b = before.object, after.object
        moved = math.hypot(b.x - a.x, b.y - a.y)
        turned = abs(math.remainder(b.yaw - a.yaw, math.pi))
        if (moved > self.p.change_dist or turned > math.radians(self.p.change_angle_deg)
                or a.resting_face != b.resting_face):
            return "changed"
        return "no_change"

    def check_grasp_success(self, state: WorkspaceState) -> bool:
        return bool(state.held and state.object.lift >= self.p.grasp_lift - 1e-9)

    def attempt_grasp(self, state: WorkspaceState, gx: float, gy: float, yaw: float) -> WorkspaceState:
        """Descend open, close along the yaw axis, and lift if the object is caught."""
        st = state.copy()
        p = self.p
        st.ee.x, st.ee.y, st.ee.yaw, st.ee.pitch_y = gx, gy, yaw, 0.0
        st.ee.gripper = "open"
        clear = min(gx, gy, WORKSPACE_SIZE - gx, WORKSPACE_SIZE - gy)
        if clear < p.palm_clearance:
            st.ee.gripper = "closed"
            return st  # palm would hit a wall on the way down
        obj = st.object
        c = (math.cos(yaw), math.sin(yaw))
        e = (-c[1], c[0])
        corners = footprint_corners(obj)
        along = (corners[:, 0] - gx) * c[0] + (corners[:, 1] - gy) * c[1]
        lo, hi = float(along.min()), float(along.max())
        off = (obj.x - gx) * e[0] + (obj.y - gy) * e[1]
        half = 0.5 * p.max_opening
        st.ee.gripper = "closed"
        if obj.tilt_wall is not None or lo < -half or hi > half or abs(off) > p.grasp_center_tol:
            return st
        # closing fingers square the box against the pads and center it
        delta = math.remainder(yaw - obj.yaw, HALF_PI)
        new_yaw = obj.yaw + delta
        (ux, uy), _ = body_axes(new_yaw)
        width = obj.extent[0] if abs(ux * c[0] + uy * c[1]) > 0.5 else obj.extent[1]
        if width > p.max_opening or min(abs(width - dim) for dim in obj.dims) > p.grasp_width_tol:
            return st
        obj.yaw = new_yaw
        obj.x, obj.y = gx + off * e[0], gy + off * e[1]
        obj.lift = p.grasp_lift
        st.held = True
        st.ee.z = p.grasp_lift + obj.extent[2]
        return st


def place_against_wall(dims, mass, mu, wall: int, axis: int, offset: float = 0.0,
                       gap: float = 0.0, yaw_jitter: float = 0.0) -> ObjectState | None:
    """Build a flat object whose body ``axis`` faces ``wall``.

    ``offset`` in [-0.5, 0.5] slides the object along the wall as a fraction of
    the free length; ``gap`` is the clearance of the closest corner.
    """
    nx, ny = WALL_NORMALS[wall]
    yaw = math.atan2(ny, nx) - (HALF_PI if axis == 1 else 0.0) + yaw_jitter
    obj = ObjectState(0.0, 0.0, yaw, tuple(dims), mass, mu)
    corners = footprint_corners(obj)
    reach = float(np.max(corners[:, 0] * nx + corners[:, 1] * ny))
    along = corners[:, 1] if nx != 0 else corners[:, 0]
    free = WORKSPACE_SIZE - float(along.max() - along.min())
    if free < 0:
        return None
    normal_pos = (WALL_OFFSETS[wall] - reach - gap) / (nx if nx != 0 else ny)
    tangent_pos = WORKSPACE_SIZE / 2 + offset * free
    if nx != 0:
        obj.x, obj.y = normal_pos, tangent_pos
    else:
        obj.x, obj.y = tangent_pos, normal_pos
    return obj
