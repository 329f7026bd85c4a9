"""Executable primitives (push, grasp, learned and manual flip) and rewards.

Every primitive starts by moving the end effector to the start pose chosen
by the high-level agent, runs its controller, then retracts home and lets
the object settle.  A start pose whose descent would land on the object is
reported as a failure without touching the scene.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .agents import LowLevelAction, LowState, LowTransition, project_low_state
from .config import PhysicsParams, PrimitiveParams, RewardParams
from .perception import FLIP, GRASP, PRIMITIVES, PUSH, StartPose
from .sim import (HOME_POSE, WALL_NORMALS, ContactReading, Simulator, WorkspaceState, footprint_corners,
                  surface_height, tip_position)

RESULTS = {
    "push": ("at_wall", "changed", "no_change"),
    "flip": ("flip_success", "flip_fail", "force_abort"),
    "grasp": ("grasp_success", "grasp_fail"),
}


@dataclass
class PrimitiveOutcome:
    kind: str
    result: str
    before: WorkspaceState
    after: WorkspaceState
    low_transitions: list[LowTransition] = field(default_factory=list)
    steps: int = 0
    actions: list[int] = field(default_factory=list)
    blocked: bool = False

    def __post_init__(self):
        if self.result not in RESULTS.get(self.kind, ()):
            raise ValueError(f"result {self.result!r} is not valid for a {self.kind} primitive")

    @property
    def success(self) -> bool:
        return self.result in ("at_wall", "flip_success", "grasp_success")


# ---------------------------------------------------------------------------
# rewards


def low_reward(f_c: float, z_tau: float, flip_success_now: bool, p: RewardParams | None = None) -> float:
    """Flip bonus plus the contact-shaped step reward; the force penalty wins
    over the positive-contact branch."""
    p = p or RewardParams()
    if f_c > p.f_limit:
        r_l = -1.0
    elif f_c > 0:
        r_l = min(p.sigma, z_tau * p.sigma / p.w)
    else:
        r_l = 0.0
    return (p.r_flip if flip_success_now else 0.0) + r_l


def high_reward(outcome: PrimitiveOutcome, p: RewardParams | None = None) -> float:
    p = p or RewardParams()
    return {
        "flip_success": p.r_flip,
        "grasp_success": p.r_grasp,
        "at_wall": p.r_push_wall,
        "changed": p.r_push_change,
    }.get(outcome.result, 0.0)


# ---------------------------------------------------------------------------
# shared motion helpers


def move_to_start(state: WorkspaceState, start: StartPose, physics: PhysicsParams) -> WorkspaceState | None:
    """Place the closed gripper at ``start``; None when the descent hits the object."""
    st = state.copy()
    ee = st.ee
    ee.x, ee.y, ee.z, ee.yaw, ee.pitch_y = start.x, start.y, start.z, start.yaw, 0.0
    ee.gripper = "closed"
    tip = tip_position(ee, physics.finger_length)
    if float(surface_height(st.object, tip[0], tip[1])) > tip[2]:
        return None
    return st


def retract(sim: Simulator, state: WorkspaceState) -> WorkspaceState:
    st = state.copy()
    st.ee.x, st.ee.y, st.ee.z, st.ee.yaw, st.ee.pitch_y = HOME_POSE
    return sim.settle(st)


# ---------------------------------------------------------------------------
# push and grasp


def exec_push(sim: Simulator, state: WorkspaceState, start: StartPose,
              params: PrimitiveParams | None = None) -> PrimitiveOutcome:
    """Sweep the closed gripper along the start heading, stopping on resistance."""
    params = params or PrimitiveParams()
    st = move_to_start(state, start, sim.p)
    if st is None:
        return PrimitiveOutcome("push", "no_change", state, state.copy(), blocked=True)
    c, s = math.cos(start.yaw), math.sin(start.yaw)
    n_steps = int(round(params.push_stroke / params.push_step))
    steps = 0
    for _ in range(n_steps):
        st, reading = sim.step_ee(st, (params.push_step * c, params.push_step * s, 0.0, 0.0, 0.0))
        steps += 1
        if reading.f_current >= params.push_stop_force:
            break
    after = retract(sim, st)
    return PrimitiveOutcome("push", sim.check_push_success(state, after), state, after, steps=steps)


def exec_grasp(sim: Simulator, state: WorkspaceState, start: StartPose) -> PrimitiveOutcome:
    after = sim.attempt_grasp(state, start.x, start.y, start.yaw)
    result = "grasp_success" if sim.check_grasp_success(after) else "grasp_fail"
    if not after.held:
        after = retract(sim, after)
    return PrimitiveOutcome("grasp", result, state, after, steps=1)


# ---------------------------------------------------------------------------
# flipping

# A flip controller maps (low-level state, last contact reading) to
# (action index or None, forward, up, pitch increment in the start frame).
Controller = Callable[[LowState, ContactReading], tuple]


def flip_rollout(sim: Simulator, state: WorkspaceState, start: StartPose, controller: Controller,
                 horizon: int, rewards: RewardParams | None = None,
                 post_step: Callable | None = None) -> PrimitiveOutcome:
    """Run a flip controller for up to ``horizon`` steps.

    The step force f_c is the peak contact force seen during the step.  The
    rollout stops early once the settled object stands (flip success) or f_c
    exceeds the force limit.  The last step before the horizon is also
    marked terminal so the low-level values stay bounded.
    """
    rewards = rewards or RewardParams()
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    st = move_to_start(state, start, sim.p)
    if st is None:
        return PrimitiveOutcome("flip", "flip_fail", state, state.copy(), blocked=True)
    c, s = math.cos(start.yaw), math.sin(start.yaw)
    reading = ContactReading()
    low = project_low_state(st.ee, start, reading)
    transitions: list[LowTransition] = []
    actions: list[int] = []
    result = "flip_fail"
    for t in range(horizon):
        index, fwd, up, dpitch = controller(low, reading)
        st, reading = sim.step_ee(st, (fwd * c, fwd * s, up, 0.0, dpitch))
        if post_step is not None:
            st, reading = post_step(st, reading)
        nxt = project_low_state(st.ee, start, reading)
        flipped = sim.check_flip_success(state, sim.settle(st))
        f_c = reading.f_max
        r = low_reward(f_c, nxt.z, flipped, rewards)
        abort = f_c > rewards.f_limit
        terminal = flipped or abort or t == horizon - 1
        if index is not None:
            actions.append(index)
        transitions.append(LowTransition(low, -1 if index is None else index, r, nxt, terminal))
        low = nxt
        if flipped or abort:
            result = "flip_success" if flipped else "force_abort"
            break
    after = retract(sim, st)
    if result == "flip_fail" and sim.check_flip_success(state, after):
        result = "flip_success"
    return PrimitiveOutcome("flip", result, state, after, transitions, len(transitions), actions)


def agent_controller(policy: Callable[[LowState], int], params: PrimitiveParams) -> Controller:
    """Wrap a discrete low-level policy (state -> action index)."""
    def control(low: LowState, reading: ContactReading):
        index = int(policy(low))
        d, z, t = LowLevelAction(index).increments(params)
        return index, d, z, t
    return control


def exec_flip_learned(sim: Simulator, state: WorkspaceState, start: StartPose,
                      policy: Callable[[LowState], int], params: PrimitiveParams | None = None,
                      rewards: RewardParams | None = None) -> PrimitiveOutcome:
    params = params or PrimitiveParams()
    return flip_rollout(sim, state, start, agent_controller(policy, params), params.horizon, rewards)


class ManualFlip:
    """Three-stage hand-designed flip controller.

    1. advance until the finger touches something;
    2. climb diagonally, trading forward for upward motion to hold the force
       inside [lo, hi], until the finger has risen ``manual_stage2_rise``;
    3. advance, lifting whenever the force reaches ``lo``.

    After every stage-2/3 step the finger backs off along the heading so
    the spring force returns below ``hi``.
    """

    def __init__(self, params: PrimitiveParams, physics: PhysicsParams):
        self.p = params
        self.k = physics.contact_stiffness
        self.stage = 1

    def __call__(self, low: LowState, reading: ContactReading):
        p = self.p
        f = reading.f_current
        if self.stage == 1 and f > 0:
            self.stage = 2
        if self.stage == 2 and low.z >= p.manual_stage2_rise:
            self.stage = 3
        if self.stage == 1:
            return None, p.a_d, 0.0, 0.0
        if self.stage == 2:
            if f < p.manual_force_lo:
                g = p.manual_gain
            elif f > p.manual_force_hi:
                g = -p.manual_gain
            else:
                g = 0.0
            return None, p.a_d * (1.0 + g), p.a_z * (1.0 - g), 0.0
        return None, p.a_d, (p.a_z if f >= p.manual_force_lo else 0.0), 0.0

    def regulate(self, sim: Simulator, yaw: float):
        hi = self.p.manual_force_hi
        c, s = math.cos(yaw), math.sin(yaw)

        def post(st: WorkspaceState, reading: ContactReading):
            if self.stage == 1 or reading.f_current <= hi:
                return st, reading
            # a small margin so the force ends strictly inside the band
            back = (reading.f_current - hi) / self.k + 1e-4
            st, after = sim.step_ee(st, (-back * c, -back * s, 0.0, 0.0, 0.0))
            after.f_max = max(after.f_max, reading.f_max)
            return st, after
        return post


def exec_flip_manual(sim: Simulator, state: WorkspaceState, start: StartPose,
                     params: PrimitiveParams | None = None,
                     rewards: RewardParams | None = None) -> PrimitiveOutcome:
    params = params or PrimitiveParams()
    ctrl = ManualFlip(params, sim.p)
    return flip_rollout(sim, state, start, ctrl, params.horizon, rewards, ctrl.regulate(sim, start.yaw))


def execute(kind: int, sim: Simulator, state: WorkspaceState, start: StartPose, *,
            low_policy: Callable[[LowState], int] | None = None, manual_flip: bool = False,
            params: PrimitiveParams | None = None, rewards: RewardParams | None = None) -> PrimitiveOutcome:
    """Dispatch on a primitive id from :data:`PRIMITIVES`."""
    if kind == PUSH:
        return exec_push(sim, state, start, params)
    if kind == GRASP:
        return exec_grasp(sim, state, start)
    if kind == FLIP:
        if manual_flip:
            return exec_flip_manual(sim, state, start, params, rewards)
        if low_policy is None:
            raise ValueError("a learned flip needs a low-level policy")
        return exec_flip_learned(sim, state, start, low_policy, params, rewards)
    raise ValueError(f"unknown primitive id {kind}; expected one of {list(range(len(PRIMITIVES)))}")


def start_behind(state: WorkspaceState, wall: int, clearance: float = 0.02, standoff: float = 0.01,
                 offset: float = 0.0, yaw_jitter: float = 0.0) -> StartPose:
    """Start pose facing ``wall``, ``standoff`` behind the object's near face.

    ``offset`` slides the pose sideways along the wall (metres).
    """
    nx, ny = WALL_NORMALS[wall]
    corners = footprint_corners(state.object)
    base = float(np.min(corners[:, 0] * nx + corners[:, 1] * ny)) - standoff
    if nx != 0:
        x, y = base * nx, state.object.y + offset
    else:
        x, y = state.object.x + offset, base * ny
    return StartPose(x, y, clearance, math.atan2(ny, nx) + yaw_jitter)
