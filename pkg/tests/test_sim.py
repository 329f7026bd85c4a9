import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flipgrasp.config import DomainRandomizationSpec, PhysicsParams
from flipgrasp.sim import (HALF_PI, WORKSPACE_SIZE, ContactReading, ObjectState, SimError, Simulator,
                           balance_angle, flush_wall, footprint_corners, min_wall_distance, place_against_wall,
                           pivot_frame, wall_gaps)

from conftest import BOX0, centered_box, flush_box, make_state


def penetration_free(state, tol=1e-9):
    return min(wall_gaps(state.object)) >= -tol and state.object.lift >= 0


# ---------------------------------------------------------------------------
# reset


def test_reset_box0_random_lies_flat_inside(sim, box0_spec):
    st = sim.reset(box0_spec, "random", seed=7)
    assert st.object.pitch == 0.0
    assert st.object.resting_face == "flat"
    assert st.object.dims == pytest.approx(BOX0)
    assert st.object.mass == pytest.approx(0.209)
    assert min_wall_distance(st.object) > 0


def test_reset_is_deterministic(sim, box0_spec):
    assert sim.reset(box0_spec, "random", seed=7) == sim.reset(box0_spec, "random", seed=7)
    assert sim.reset(box0_spec, "random", seed=7) != sim.reset(box0_spec, "random", seed=8)


@pytest.mark.parametrize("seed", range(20))
def test_reset_close_to_wall_is_within_a_centimetre(sim, seed):
    st = sim.reset(DomainRandomizationSpec(), "close_to_wall", seed=seed)
    gaps = wall_gaps(st.object)
    assert min(gaps) <= 0.010 + 1e-12
    assert min(gaps) >= -1e-9


def test_reset_unplaceable(sim):
    huge = DomainRandomizationSpec.fixed(0.6, 0.5, 0.04, 0.2)
    with pytest.raises(SimError, match="unplaceable"):
        sim.reset(huge, "random", seed=0)


def test_reset_rejects_unknown_placement(sim):
    with pytest.raises(SimError):
        sim.reset(DomainRandomizationSpec(), "floating", seed=0)


# ---------------------------------------------------------------------------
# step_ee


def _ee_at(state, x, y, z, yaw=0.0):
    st = state.copy()
    st.ee.x, st.ee.y, st.ee.z, st.ee.yaw, st.ee.pitch_y = x, y, z, yaw, 0.0
    return st


def test_free_space_motion_leaves_object_alone(sim):
    st = _ee_at(centered_box(), 0.05, 0.05, 0.02)
    after, reading = sim.step_ee(st, (0.03, 0.01, 0.0, 0.0, 0.0))
    assert after.object == st.object
    assert reading == ContactReading()
    assert after.ee.x == pytest.approx(0.08)


def test_push_in_open_space_follows_kinematic_rule(sim):
    # tip starts on the west face, centred, so the push has no lever arm
    st = centered_box()
    face = 0.224 - BOX0[0] / 2
    st = _ee_at(st, face, 0.224, 0.02)
    after, reading = sim.step_ee(st, (0.05, 0.0, 0.0, 0.0, 0.0))
    p = sim.p
    slack = 0.5 * 0.209 * p.gravity / p.contact_stiffness
    moved = after.object.x - st.object.x
    assert moved == pytest.approx(0.05 - slack, abs=p.substep_len)
    assert after.object.y == pytest.approx(0.224)
    assert after.object.yaw == pytest.approx(0.0, abs=1e-12)
    # while sliding, the spring force equals Coulomb friction
    assert reading.f_current == pytest.approx(0.5 * 0.209 * p.gravity, rel=0.05)


def test_off_centre_push_rotates_object(sim):
    st = _ee_at(centered_box(), 0.224 - BOX0[0] / 2, 0.224 + 0.03, 0.02)
    after, _ = sim.step_ee(st, (0.05, 0.0, 0.0, 0.0, 0.0))
    # contact above the centre, pushing +x: lever (r x d) is negative -> clockwise
    assert after.object.yaw < -math.radians(1)


def test_force_law_matches_known_penetration(sim):
    # heavy, grippy box: a 3 mm poke stays below the friction slack, so no sliding
    st = centered_box(mu=0.8)
    st.object.mass = 0.4
    face = 0.224 - BOX0[0] / 2
    st = _ee_at(st, face, 0.224, 0.02)
    after, reading = sim.step_ee(st, (0.003, 0.0, 0.0, 0.0, 0.0))
    assert after.object.x == st.object.x
    assert reading.f_current == pytest.approx(sim.p.contact_stiffness * 0.003, rel=1e-9)
    assert reading.f_max == pytest.approx(reading.f_current)
    assert reading.f_d == pytest.approx(reading.f_current)


def test_force_is_capped(sim):
    p = PhysicsParams(contact_force_cap=1.0)
    s = Simulator(p)
    st = centered_box(mu=0.8)
    st.object.mass = 0.4
    st = _ee_at(st, 0.224 - BOX0[0] / 2, 0.224, 0.02)
    _, reading = s.step_ee(st, (0.005, 0.0, 0.0, 0.0, 0.0))
    assert reading.f_current == pytest.approx(1.0)


def test_push_against_flush_object_high_up_raises_pitch(sim):
    st = flush_box(wall=1, axis=0)
    obj = st.object
    near = obj.x - obj.extent[0] / 2
    st = _ee_at(st, near - 0.002, obj.y, 0.8 * obj.extent[2])
    pitches = []
    for _ in range(6):
        st, _ = sim.step_ee(st, (0.005, 0.0, 0.0, 0.0, 0.0))
        pitches.append(st.object.pitch)
    assert pitches[-1] > 0
    assert all(b >= a for a, b in zip(pitches, pitches[1:]))
    assert penetration_free(st)


def test_step_rejects_bad_displacement(sim):
    with pytest.raises(SimError):
        sim.step_ee(centered_box(), (0.0, math.nan, 0.0, 0.0, 0.0))
    with pytest.raises(SimError):
        sim.step_ee(centered_box(), (0.0, 0.0, 0.0))


def test_step_does_not_mutate_input(sim):
    st = _ee_at(centered_box(), 0.224 - BOX0[0] / 2, 0.224, 0.02)
    snapshot = st.copy()
    sim.step_ee(st, (0.05, 0.0, 0.0, 0.0, 0.0))
    assert st == snapshot


@settings(max_examples=40, deadline=None)
@given(
    x=st.floats(0.02, 0.43), y=st.floats(0.02, 0.43), yaw=st.floats(-math.pi, math.pi),
    moves=st.lists(st.tuples(st.floats(-0.02, 0.02), st.floats(-0.02, 0.02), st.floats(-0.01, 0.01)),
                   min_size=1, max_size=8),
    wall=st.integers(0, 3),
)
def test_operations_never_penetrate_walls_or_floor(x, y, yaw, moves, wall):
    sim = Simulator()
    st = flush_box(wall=wall, axis=wall % 2)
    st = _ee_at(st, x, y, 0.02, yaw)
    for dx, dy, dz in moves:
        st, reading = sim.step_ee(st, (dx, dy, dz, 0.0, 0.0))
        assert penetration_free(st)
        assert 0 <= reading.f_current <= sim.p.contact_force_cap
        assert reading.f_max >= reading.f_current
        assert 0 <= st.object.pitch <= HALF_PI
    assert penetration_free(sim.settle(st))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.floats(-0.03, 0.03))
def test_step_is_deterministic(seed, d):
    sim = Simulator()
    st = sim.reset(DomainRandomizationSpec(), "close_to_wall", seed=seed)
    st = _ee_at(st, st.object.x - 0.08, st.object.y, 0.02)
    a = sim.step_ee(st, (0.08 + d, 0.0, 0.0, 0.0, 0.0))
    b = sim.step_ee(st, (0.08 + d, 0.0, 0.0, 0.0, 0.0))
    assert a == b


# ---------------------------------------------------------------------------
# settle and flip success


def _tilted(pitch, wall=1, axis=0, dims=BOX0):
    sim = Simulator()
    return sim.set_pitch(flush_box(wall, axis, dims), wall, pitch)


def _theta_b(state):
    fr = pivot_frame(state.object, flush_wall(state.object))
    return balance_angle(fr.a, fr.h)


def test_settle_flat_is_unchanged(sim):
    st = flush_box()
    assert sim.settle(st) == st


def test_settle_past_balance_stands_up(sim):
    tb = _theta_b(flush_box())
    after = sim.settle(_tilted(tb + 0.05))
    assert after.object.resting_face == "standing"
    assert after.object.pitch == pytest.approx(HALF_PI)
    assert penetration_free(after)


def test_settle_below_balance_falls_back(sim):
    tb = _theta_b(flush_box())
    after = sim.settle(_tilted(tb - 0.05))
    assert after.object.resting_face == "flat"
    assert after.object.pitch == 0.0


def test_balance_angle_uses_pivot_plane_width():
    a, h = BOX0[0], BOX0[2]
    assert balance_angle(a, h) == pytest.approx(math.atan(a / h))


def test_standing_box_footprint_and_height(sim):
    after = sim.settle(_tilted(_theta_b(flush_box()) + 0.1))
    obj = after.object
    assert obj.extent[2] == pytest.approx(BOX0[0])
    assert sorted(obj.extent[:2]) == pytest.approx(sorted((BOX0[1], BOX0[2])))
    assert flush_wall(obj) is None or min(wall_gaps(obj)) == pytest.approx(0.0, abs=1e-9)


def test_flip_success_predicate(sim):
    flat = flush_box()
    standing = sim.settle(_tilted(_theta_b(flat) + 0.1))
    assert sim.check_flip_success(flat, standing)
    assert not sim.check_flip_success(flat, flat)
    assert not sim.check_flip_success(standing, standing)


# ---------------------------------------------------------------------------
# push and grasp predicates


def test_push_success_at_wall(sim):
    before = centered_box()
    after = before.copy()
    after.object.x = WORKSPACE_SIZE - BOX0[0] / 2 - 0.005
    assert sim.check_push_success(before, after) == "at_wall"


def test_push_success_changed_by_rotation(sim):
    before = centered_box()
    after = before.copy()
    after.object.yaw = math.radians(20)
    assert sim.check_push_success(before, after) == "changed"


def test_push_success_no_change(sim):
    st = centered_box()
    assert sim.check_push_success(st, st.copy()) == "no_change"


def test_grasp_standing_box_succeeds(sim):
    standing = sim.settle(_tilted(_theta_b(flush_box()) + 0.1))
    obj = standing.object
    # close across the thinnest horizontal dimension (the former height)
    axis = 0 if obj.extent[0] < obj.extent[1] else 1
    yaw = obj.yaw + (0.0 if axis == 0 else HALF_PI)
    after = sim.attempt_grasp(standing, obj.x, obj.y, yaw)
    assert sim.check_grasp_success(after)
    assert after.held and after.ee.gripper == "closed"


@pytest.mark.parametrize("yaw", [0.0, HALF_PI])
def test_grasp_flat_box_fails_too_wide(sim, yaw):
    st = centered_box()
    after = sim.attempt_grasp(st, 0.224, 0.224, yaw)
    assert not sim.check_grasp_success(after)
    assert min(BOX0[:2]) > sim.p.max_opening


def test_grasp_off_object_fails(sim):
    st = centered_box()
    assert not sim.check_grasp_success(sim.attempt_grasp(st, 0.05, 0.05, 0.0))


def test_place_against_wall_is_flush():
    for wall in range(4):
        for axis in range(2):
            obj = place_against_wall(BOX0, 0.2, 0.5, wall, axis)
            assert flush_wall(obj) == wall
            assert wall_gaps(obj)[wall] == pytest.approx(0.0, abs=1e-12)


def test_footprint_corners_span_dims():
    obj = ObjectState(0.2, 0.2, 0.3, BOX0, 0.2, 0.5)
    c = footprint_corners(obj)
    edges = sorted(np.linalg.norm(c - np.roll(c, 1, axis=0), axis=1))
    assert edges == pytest.approx([BOX0[1], BOX0[1], BOX0[0], BOX0[0]])
