import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flipgrasp import approx
from flipgrasp.agents import (LOW_SCALE, N_LOW_ACTIONS, AgentError, HighAgent, HighLevelAction, HighTransition,
                              LowAgent, LowLevelAction, LowState, LowTransition, ReplayBuffer, high_input,
                              linear_epsilon, masked_max, project_low_state, select_high_action, td_target_high,
                              td_target_low, update_target)
from flipgrasp.approx import Network, fcn_spec, mlp_spec
from flipgrasp.config import AgentParams, PrimitiveParams
from flipgrasp.perception import FLIP, GRASP, PUSH, StartPose
from flipgrasp.primitives import start_behind
from flipgrasp.sim import ContactReading, EndEffectorState, Simulator

from conftest import flush_box

SHAPE = (16, 3, 64, 64)


def _qmaps(rng):
    return rng.normal(size=SHAPE)


def _masks(rng, p=0.05):
    return rng.random(SHAPE) < p


# ---------------------------------------------------------------------------
# action encodings


def test_low_action_bijection():
    seen = set()
    for d in (0, 1):
        for z in (0, 1):
            for t in (0, 1, 2):
                a = LowLevelAction.from_components(d, z, t)
                assert a.components == (d, z, t)
                seen.add(a.index)
    assert seen == set(range(N_LOW_ACTIONS))


def test_low_action_increments_use_step_sizes():
    p = PrimitiveParams()
    assert LowLevelAction.from_components(1, 1, 2).increments(p) == pytest.approx((0.005, 0.005, math.radians(2)))
    assert LowLevelAction.from_components(0, 0, 0).increments(p) == pytest.approx((0.0, 0.0, -math.radians(2)))


def test_low_action_out_of_range():
    with pytest.raises(AgentError):
        LowLevelAction(12)
    with pytest.raises(AgentError):
        LowLevelAction.from_components(2, 0, 0)


def test_displacement_follows_heading():
    dx, dy, dz, _, _ = LowLevelAction.from_components(1, 0, 1).displacement(math.pi / 2, PrimitiveParams())
    assert (dx, dy, dz) == pytest.approx((0.0, 0.005, 0.0), abs=1e-15)


# ---------------------------------------------------------------------------
# high-level selection


def test_greedy_picks_unique_max():
    q = np.zeros(SHAPE)
    q[3, FLIP, 20, 10] = 5.0
    masks = np.ones(SHAPE, bool)
    a = select_high_action(q, masks, 0.0, np.random.default_rng(0))
    assert a == HighLevelAction(10, 20, 3, FLIP)
    assert a.primitive == "flip"
    assert a.as_dict() == {"x": 10, "y": 20, "i": 3, "phi": "flip"}


def test_masked_max_never_selected():
    q = np.zeros(SHAPE)
    q[0, GRASP, 5, 5] = 10.0
    q[1, PUSH, 6, 6] = 1.0
    masks = np.ones(SHAPE, bool)
    masks[0, GRASP, 5, 5] = False
    assert select_high_action(q, masks, 0.0, np.random.default_rng(0)) == HighLevelAction(6, 6, 1, PUSH)


def test_ties_go_to_lowest_flat_index():
    q = np.zeros(SHAPE)
    masks = np.zeros(SHAPE, bool)
    masks[2, FLIP, 7, 9] = masks[5, PUSH, 0, 0] = True
    assert select_high_action(q, masks, 0.0, np.random.default_rng(0)) == HighLevelAction(9, 7, 2, FLIP)


def test_exploration_stays_in_top_ten():
    rng = np.random.default_rng(5)
    q, masks = _qmaps(rng), _masks(rng)
    flat = np.flatnonzero(masks)
    top = set(flat[np.argsort(-q.reshape(-1)[flat])[:10]].tolist())
    seen = set()
    for _ in range(1000):
        a = select_high_action(q, masks, 1.0, rng)
        seen.add(int(np.ravel_multi_index((a.i, a.phi, a.y, a.x), SHAPE)))
    assert seen <= top
    assert len(seen) == 10


def test_per_primitive_exploration_covers_every_map():
    rng = np.random.default_rng(6)
    q, masks = _qmaps(rng), _masks(rng)
    q[:, PUSH] += 10.0  # global top-k would be push only
    maps = {}
    for _ in range(3000):
        a = select_high_action(q, masks, 1.0, rng, per_primitive=True)
        maps.setdefault((a.i, a.phi), set()).add((a.y, a.x))
    assert set(maps) == {(i, phi) for i in range(16) for phi in range(3) if masks[i, phi].any()}
    for (i, phi), picks in maps.items():
        ys, xs = np.nonzero(masks[i, phi])
        order = np.argsort(-q[i, phi][ys, xs], kind="stable")[:10]
        assert picks <= set(zip(ys[order].tolist(), xs[order].tolist()))


def test_per_primitive_skips_empty_primitive():
    rng = np.random.default_rng(7)
    q, masks = _qmaps(rng), _masks(rng)
    masks[:, FLIP] = False
    masks[:, GRASP] = False
    masks[3:, PUSH] = False
    for _ in range(200):
        a = select_high_action(q, masks, 1.0, rng, per_primitive=True)
        assert a.phi == PUSH and a.i < 3


def test_no_admissible_action():
    with pytest.raises(AgentError, match="no admissible action"):
        select_high_action(np.zeros(SHAPE), np.zeros(SHAPE, bool), 0.0, np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), eps=st.floats(0, 1), shift=st.floats(-100, 100))
def test_selection_respects_masks_and_shifts(seed, eps, shift):
    rng = np.random.default_rng(seed)
    q, masks = _qmaps(rng), _masks(rng, 0.01)
    a = select_high_action(q, masks, eps, np.random.default_rng(seed))
    assert masks[a.i, a.phi, a.y, a.x]
    g1 = select_high_action(q, masks, 0.0, np.random.default_rng(0))
    g2 = select_high_action(q + shift, masks, 0.0, np.random.default_rng(0))
    assert g1 == g2


def test_linear_epsilon_schedule():
    assert linear_epsilon(0, 1.0, 0.1, 400) == 1.0
    assert linear_epsilon(200, 1.0, 0.1, 400) == pytest.approx(0.55)
    assert linear_epsilon(400, 1.0, 0.1, 400) == 0.1
    assert linear_epsilon(10_000, 1.0, 0.1, 400) == 0.1


# ---------------------------------------------------------------------------
# low-level state projection


def test_projection_at_start_is_origin():
    start = StartPose(0.1, 0.2, 0.05, 0.7)
    ee = EndEffectorState(0.1, 0.2, 0.05, 0.7)
    s = project_low_state(ee, start, ContactReading(1.0, 2.0, 1.5))
    assert (s.d, s.z, s.theta_y, s.f_d, s.f_max) == (0.0, 0.0, 0.0, 1.0, 2.0)


def test_projection_is_heading_invariant():
    start = StartPose(0.2, 0.2, 0.03, math.pi / 2)
    ee = EndEffectorState(0.2, 0.23, 0.03, math.pi / 2)
    assert project_low_state(ee, start, ContactReading()).d == pytest.approx(0.03)


def _trace(wall, actions):
    sim = Simulator()
    state = flush_box(wall=wall, axis=wall % 2)
    start = start_behind(state, wall, standoff=0.01)
    st = state.copy()
    st.ee.x, st.ee.y, st.ee.z, st.ee.yaw, st.ee.pitch_y = start.x, start.y, start.z, start.yaw, 0.0
    p = PrimitiveParams()
    out = []
    for a in actions:
        st, reading = sim.step_ee(st, LowLevelAction(a).displacement(start.yaw, p))
        out.append(project_low_state(st.ee, start, reading).vector())
    return np.array(out)


def test_low_state_traces_are_frame_invariant():
    # same box, same relative start, against the east and the north wall
    actions = [7] * 6 + [10] * 10 + [4] * 5
    east, north = _trace(1, actions), _trace(3, actions)
    assert np.abs(east[:, 3:]).max() > 0  # the trace actually touches the box
    assert np.allclose(east, north, atol=1e-9)


# ---------------------------------------------------------------------------
# backups


def _const_mlp(values):
    net = Network(mlp_spec(), init="zeros", dtype=np.float64)
    net.parameters()[-1][...] = values
    return net


def _const_fcn(values):
    net = Network(fcn_spec(), init="zeros", dtype=np.float64)
    net.parameters()[-1][...] = values
    return net


def _high_tr(reward, terminal, masks=None):
    grid = np.zeros((64, 64))
    masks = np.ones(SHAPE, bool) if masks is None else masks
    return HighTransition(grid, HighLevelAction(1, 2, 3, PUSH), reward, grid, HighTransition.pack(masks), terminal)


def test_td_high_terminal_grasp():
    assert td_target_high(_high_tr(1.0, True), _const_fcn([9.0, 9.0, 9.0]), 0.5) == 1.0


def test_td_high_push_backup():
    assert td_target_high(_high_tr(0.2, False), _const_fcn([0.5, 0.1, 0.3]), 0.5) == pytest.approx(0.45)


def test_td_high_respects_next_masks():
    masks = np.zeros(SHAPE, bool)
    masks[:, FLIP] = True
    assert td_target_high(_high_tr(0.2, False, masks), _const_fcn([0.5, 0.1, 0.3]), 0.5) == pytest.approx(0.25)


def test_td_high_zero_net():
    assert td_target_high(_high_tr(0.1, False), _const_fcn([0.0, 0.0, 0.0]), 0.5) == pytest.approx(0.1)


def test_pack_round_trip():
    masks = _masks(np.random.default_rng(0))
    tr = _high_tr(0.0, False, masks)
    assert np.array_equal(tr.unpacked_masks(SHAPE), masks)


def _low_tr(reward, terminal):
    s = LowState(0.01, 0.0, 0.0, 2.0, 3.0)
    return LowTransition(s, 4, reward, s, terminal)


def test_td_low_terminal_flip_success():
    r = 1.0 + 0.1
    assert td_target_low(_low_tr(r, True), _const_mlp(np.full(12, 3.0)), 0.98) == r


def test_td_low_force_violation_bootstraps():
    values = np.zeros(12)
    values[5] = 0.5
    assert td_target_low(_low_tr(-1.0, False), _const_mlp(values), 0.98) == pytest.approx(-1 + 0.98 * 0.5)


def test_td_low_zero_mid_step():
    assert td_target_low(_low_tr(0.0, False), _const_mlp(np.zeros(12)), 0.98) == 0.0


def test_masked_max_dead_end():
    assert masked_max(np.ones(4), np.zeros(4, bool)) == 0.0


def test_update_target_copies_and_decouples():
    net, target = Network(mlp_spec(), seed=1), Network(mlp_spec(), seed=2)
    x = np.random.default_rng(0).normal(size=(3, 5))
    update_target(net, target)
    assert np.array_equal(net.forward(x), target.forward(x))
    frozen = target.forward(x)
    net.parameters()[0] += 1.0
    assert np.array_equal(target.forward(x), frozen)
    update_target(net, target)
    again = target.forward(x)
    update_target(net, target)
    assert np.array_equal(target.forward(x), again)


# ---------------------------------------------------------------------------
# replay


def test_replay_fifo_eviction():
    buf = ReplayBuffer(3)
    for k in range(5):
        buf.add(k)
    assert len(buf) == 3
    assert buf.items() == [2, 3, 4]


def test_replay_refuses_small_sample():
    buf = ReplayBuffer(10)
    buf.add(1)
    with pytest.raises(ValueError):
        buf.sample(2, np.random.default_rng(0))


def test_replay_sampling_is_uniform():
    buf = ReplayBuffer(100)
    for k in range(100):
        buf.add(k)
    rng = np.random.default_rng(7)
    counts = np.zeros(100)
    for _ in range(10_000):
        for k in buf.sample(10, rng):
            counts[k] += 1
    assert counts.sum() == 100_000
    assert np.all(np.abs(counts - 1000) <= 150)


# ---------------------------------------------------------------------------
# agents


def test_high_input_channels():
    grid = np.zeros((64, 64))
    grid[10, 10] = 0.05
    x = high_input(grid, [0, 4])
    assert x.shape == (2, 2, 64, 64)
    assert x[0, 0, 10, 10] == pytest.approx(1.0)
    assert x[:, 1].max() <= 1.0 + 1e-6 and x[:, 1].min() >= 0.0


def test_low_feature_scale_is_positive():
    assert np.all(LOW_SCALE > 0)


def test_high_agent_update_moves_acted_entry():
    params = AgentParams(high_batch=2, high_warmup=2, lr_high=1e-2)
    agent = HighAgent(params, seed=0)
    rng = np.random.default_rng(0)
    grid = np.zeros((64, 64))
    grid[20:30, 20:30] = 0.04
    a = HighLevelAction(25, 25, 0, GRASP)
    for _ in range(2):
        agent.store(HighTransition(grid, a, 1.0, grid, HighTransition.pack(np.ones(SHAPE, bool)), True))
    before = agent.net.forward(high_input(grid, [0]))[0, GRASP, 25, 25]
    for _ in range(20):
        agent.update(rng)
    after = agent.net.forward(high_input(grid, [0]))[0, GRASP, 25, 25]
    assert abs(after - 1.0) < abs(before - 1.0)


def test_high_agent_not_ready_returns_none():
    assert HighAgent(AgentParams(), seed=0).update(np.random.default_rng(0)) is None


@pytest.mark.parametrize("double", [True, False])
def test_low_agent_learns_terminal_reward(double):
    params = AgentParams(low_batch=8, low_warmup=8, lr_low=1e-2, low_double_q=double)
    agent = LowAgent(params, seed=0)
    s = LowState(0.0, 0.0, 0.0, 0.0, 0.0)
    for _ in range(16):
        agent.store(LowTransition(s, 3, 1.0, s, True))
    rng = np.random.default_rng(0)
    for _ in range(200):
        agent.update(rng)
    assert agent.q_values(s)[3] == pytest.approx(1.0, abs=0.05)
    assert agent.act(s, 0.0, rng) == 3


def test_low_agent_target_sync_cadence():
    params = AgentParams(low_batch=4, low_warmup=4, low_target_every=5)
    agent = LowAgent(params, seed=0)
    s = LowState(0.0, 0.0, 0.0, 1.0, 1.0)
    for _ in range(4):
        agent.store(LowTransition(s, 0, 0.5, s, False))
    rng = np.random.default_rng(0)
    for _ in range(4):
        agent.update(rng)
    x = np.zeros((1, 5))
    assert not np.array_equal(agent.net.forward(x), agent.target.forward(x))
    agent.update(rng)
    assert np.array_equal(agent.net.forward(x), agent.target.forward(x))
