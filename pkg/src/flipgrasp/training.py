"""Curriculum training, the high-level episode loop and evaluation.

Training runs in three stages.  ``low_flush`` and ``low_jitter`` train the
flip controller alone from start poses placed behind a wall-side object;
``joint`` then trains both agents on full pick episodes.  Everything draws
from one generator seeded per stage, so a (seed, config) pair reproduces a
run bit for bit.  Rollouts are sequential; transitions enter the replay
buffers in execution order.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .agents import (AgentError, HighAgent, HighTransition, LowAgent, linear_epsilon)
from .approx import DivergedError
from .config import RunConfig
from .perception import (FLIP, GRASP, PRIMITIVES, HeightMap, PerceptionError, compute_masks, corrupt,
                         pixel_to_pose, render_height_map, rotate_stack)
from .primitives import PrimitiveOutcome, execute, exec_flip_learned, high_reward, start_behind
from .sim import Simulator, WorkspaceState, EndEffectorState, HOME_POSE, place_against_wall, wall_gaps

STAGES = ("low_flush", "low_jitter", "joint")


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# curriculum


@dataclass(frozen=True)
class CurriculumStage:
    """A training stage: how far start poses and objects stray from ideal.

    ``pos_jitter`` (m) and ``yaw_jitter_deg`` bound the uniform perturbation
    of the flip start pose (sideways by up to +-pos_jitter, backwards from a
    5 mm standoff by up to 2 * pos_jitter, never into the object); ``object_gap`` and ``object_yaw_deg`` bound how
    far the object sits from the wall and how skewed it is.  The joint stage
    hands start poses to the high-level agent, so its bounds are unlimited.
    """

    id: str
    pos_jitter: float
    yaw_jitter_deg: float
    object_gap: float
    object_yaw_deg: float
    gate: float = 0.7

    def sample(self, sim: Simulator, cfg: RunConfig, rng: np.random.Generator):
        """Scene and flip start pose for a low-level episode."""
        if self.id == "joint":
            raise TrainingError("the joint stage draws start poses from the high-level agent")
        r = cfg.dr.ranges()
        for _ in range(1000):
            dims = tuple(float(rng.uniform(*r[k])) for k in ("length", "width", "height"))
            mass, mu = float(rng.uniform(*r["mass"])), float(rng.uniform(*r["mu"]))
            wall, axis = int(rng.integers(4)), int(rng.integers(2))
            gap = float(rng.uniform(0.0, self.object_gap))
            yaw = math.radians(float(rng.uniform(-self.object_yaw_deg, self.object_yaw_deg)))
            obj = place_against_wall(dims, mass, mu, wall, axis, float(rng.uniform(-0.5, 0.5)), gap, yaw)
            if obj is None or min(wall_gaps(obj)) < -1e-12:
                continue
            state = WorkspaceState(obj, EndEffectorState(*HOME_POSE, max_opening=sim.p.max_opening))
            j = self.pos_jitter
            start = start_behind(
                state, wall, cfg.perception.clearance,
                standoff=0.005 + float(rng.uniform(0.0, 2.0 * j)),
                offset=float(rng.uniform(-j, j)),
                yaw_jitter=math.radians(float(rng.uniform(-self.yaw_jitter_deg, self.yaw_jitter_deg))),
            )
            return state, start
        raise TrainingError("could not sample a curriculum scene")


def curriculum(gate: float = 0.7) -> tuple[CurriculumStage, ...]:
    return (
        CurriculumStage("low_flush", 0.005, 0.0, 0.0, 0.0, gate),
        CurriculumStage("low_jitter", 0.02, 10.0, 0.01, 10.0, gate),
        CurriculumStage("joint", math.inf, math.inf, math.inf, math.inf, gate),
    )


def stage_by_id(stage_id: str, gate: float = 0.7) -> CurriculumStage:
    for st in curriculum(gate):
        if st.id == stage_id:
            return st
    raise TrainingError(f"unknown stage {stage_id!r}")


def stage_rng(seed: int, stage_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, STAGES.index(stage_id)])


# ---------------------------------------------------------------------------
# low-level training


@dataclass
class LowTrainResult:
    agent: LowAgent
    status: str  # gate_met | gate_not_met
    episodes: int
    curve: list[float] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)


def train_low(stage: CurriculumStage, episodes: int, seed: int, cfg: RunConfig | None = None,
              agent: LowAgent | None = None, episode_offset: int = 0,
              on_episode: Callable[[int, dict], None] | None = None) -> LowTrainResult:
    """Train the flip controller on ``stage`` until its gate or the budget.

    ``episode_offset`` continues the exploration clock across stages.
    """
    cfg = cfg or RunConfig()
    if stage.id == "joint":
        raise TrainingError("train_low runs only the low-level stages")
    agent = agent or LowAgent(cfg.agent, seed=seed)
    sim = Simulator(cfg.physics)
    rng = stage_rng(seed, stage.id)
    window: deque[bool] = deque(maxlen=cfg.train.window)
    curve: list[float] = []
    a = cfg.agent
    for ep in range(episodes):
        eps = linear_epsilon(episode_offset + ep, a.eps_start, a.eps_end, a.low_eps_decay_episodes)
        state, start = stage.sample(sim, cfg, rng)
        out = exec_flip_learned(sim, state, start, lambda s: agent.act(s, eps, rng),
                                cfg.primitive, cfg.reward)
        losses = _learn_low(agent, out, cfg, rng)
        window.append(out.result == "flip_success")
        rate = sum(window) / len(window)
        curve.append(rate)
        if on_episode is not None:
            on_episode(ep, {"stage": stage.id, "episode": ep + 1, "result": out.result,
                            "steps": out.steps, "trailing_flip": rate, "epsilon": eps,
                            "loss": _mean(losses)})
        if len(window) == window.maxlen and rate >= stage.gate:
            return LowTrainResult(agent, "gate_met", ep + 1, curve)
    return LowTrainResult(agent, "gate_not_met", episodes, curve)


def _learn_low(agent: LowAgent, out: PrimitiveOutcome, cfg: RunConfig, rng) -> list[float]:
    losses = []
    for tr in out.low_transitions:
        agent.store(tr)
        for _ in range(cfg.train.low_updates_per_step):
            loss = agent.update(rng)
            if loss is not None:
                losses.append(loss)
    return losses


def _mean(values) -> float | None:
    return float(np.mean(values)) if len(values) else None


# ---------------------------------------------------------------------------
# episodes


@dataclass
class StepRecord:
    step: int
    action: dict
    outcome: str
    reward: float
    low_steps: list[int]

    def as_dict(self) -> dict:
        return {"step": self.step, "action": self.action, "outcome": self.outcome,
                "reward": self.reward, "low_steps": self.low_steps}


@dataclass
class EpisodeRecord:
    seed: int
    steps: list[StepRecord]
    success: bool
    terminated: str  # grasped | budget | no_action

    @property
    def n_primitives(self) -> int:
        return len(self.steps)

    def total_reward(self) -> float:
        return float(sum(s.reward for s in self.steps))

    def as_dicts(self) -> list[dict]:
        return [s.as_dict() for s in self.steps]


def observe(state: WorkspaceState, cfg: RunConfig, seed) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Noisy height map, its rotation stack and the primitive masks."""
    hmap = corrupt(render_height_map(state, cfg.perception), cfg.dr.noise, seed)
    stack = rotate_stack(hmap, cfg.perception.n_rotations)
    return hmap.grid, stack, compute_masks(stack, cfg.perception)


def run_episode(sim: Simulator, high: HighAgent, low: LowAgent | None, cfg: RunConfig, seed: int, *,
                mode: str = "eval", eps_high: float = 0.0, eps_low: float = 0.0,
                rng: np.random.Generator | None = None, manual_flip: bool = False,
                placement: str | None = None, state: WorkspaceState | None = None,
                losses: dict | None = None) -> EpisodeRecord:
    """One pick attempt of at most ``max_primitives`` primitives.

    ``seed`` fixes the scene and the observation noise; ``rng`` drives
    exploration and replay sampling (defaults to a generator from ``seed``).
    In train mode both agents store transitions and take gradient steps.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be train or eval")
    train = mode == "train"
    rng = rng if rng is not None else np.random.default_rng(seed)
    placement = placement or cfg.train.joint_placement
    if state is None:
        state = sim.reset(cfg.dr, placement, seed=seed)
    grid, stack, masks = observe(state, cfg, [seed, 0])
    steps: list[StepRecord] = []
    terminated = "budget"
    low_policy = None
    if low is not None:
        low_policy = lambda s: low.act(s, eps_low, rng)  # noqa: E731
    for t in range(cfg.train.max_primitives):
        try:
            action, _ = high.act(stack, masks, eps_high, rng)
        except AgentError:
            terminated = "no_action"
            break
        hmap = HeightMap(grid, cfg.perception.resolution)
        try:
            start = pixel_to_pose(action.x, action.y, action.i, hmap, cfg.perception.n_rotations,
                                  cfg.perception.clearance)
        except PerceptionError:
            start = None
        if start is None:
            result = {"push": "no_change", "flip": "flip_fail", "grasp": "grasp_fail"}[action.primitive]
            out = PrimitiveOutcome(action.primitive, result, state, state.copy(), blocked=True)
        else:
            out = execute(action.phi, sim, state, start, low_policy=low_policy, manual_flip=manual_flip,
                          params=cfg.primitive, rewards=cfg.reward)
        reward = high_reward(out, cfg.reward)
        state = out.after
        done = out.result == "grasp_success"
        next_grid, next_stack, next_masks = observe(state, cfg, [seed, t + 1])
        steps.append(StepRecord(t, action.as_dict(), out.result, reward, list(out.actions)))
        if train:
            high.store(HighTransition(grid.astype(np.float32), action, reward,
                                      next_grid.astype(np.float32), HighTransition.pack(next_masks), done))
            for _ in range(cfg.train.high_updates_per_step):
                loss = high.update(rng)
                if loss is not None and losses is not None:
                    losses.setdefault("high", []).append(loss)
            if action.phi == FLIP and low is not None and not cfg.train.freeze_low:
                lows = _learn_low(low, out, cfg, rng)
                if losses is not None:
                    losses.setdefault("low", []).extend(lows)
        grid, stack, masks = next_grid, next_stack, next_masks
        if done:
            terminated = "grasped"
            break
    return EpisodeRecord(seed, steps, terminated == "grasped", terminated)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    completion_rate: float
    grasp_success_rate: float | None
    flip_success_rate: float | None
    action_efficiency: float | None
    episodes: int
    grasp_attempts: int = 0
    flip_attempts: int = 0

    def as_dict(self) -> dict:
        return {
            "completion_rate": self.completion_rate,
            "grasp_success_rate": self.grasp_success_rate,
            "flip_success_rate": self.flip_success_rate,
            "action_efficiency": self.action_efficiency,
            "episodes": self.episodes,
            "grasp_attempts": self.grasp_attempts,
            "flip_attempts": self.flip_attempts,
        }


def metrics_from_records(records: list[EpisodeRecord]) -> Metrics:
    if not records:
        raise TrainingError("empty evaluation")
    grasps = [s.outcome == "grasp_success" for r in records for s in r.steps if s.action["phi"] == "grasp"]
    flips = [s.outcome == "flip_success" for r in records for s in r.steps if s.action["phi"] == "flip"]
    wins = [r.n_primitives for r in records if r.success]
    return Metrics(
        completion_rate=sum(r.success for r in records) / len(records),
        grasp_success_rate=sum(grasps) / len(grasps) if grasps else None,
        flip_success_rate=sum(flips) / len(flips) if flips else None,
        action_efficiency=float(np.mean(wins)) if wins else None,
        episodes=len(records),
        grasp_attempts=len(grasps),
        flip_attempts=len(flips),
    )


class TrailingStats:
    """Trailing windows over episodes and over attempts of each primitive."""

    def __init__(self, window: int = 100):
        self.episodes: deque[bool] = deque(maxlen=window)
        self.lengths: deque[int] = deque(maxlen=window)
        self.attempts = {name: deque(maxlen=window) for name in PRIMITIVES}

    def add(self, record: EpisodeRecord) -> None:
        self.episodes.append(record.success)
        if record.success:
            self.lengths.append(record.n_primitives)
        for s in record.steps:
            phi = s.action["phi"]
            self.attempts[phi].append(s.outcome in ("flip_success", "grasp_success", "at_wall"))

    @staticmethod
    def _rate(values) -> float | None:
        return sum(values) / len(values) if values else None

    def completion(self) -> float | None:
        return self._rate(self.episodes)

    def rate(self, primitive: str) -> float | None:
        return self._rate(self.attempts[primitive])

    def efficiency(self) -> float | None:
        return float(np.mean(self.lengths)) if self.lengths else None


# ---------------------------------------------------------------------------
# joint training and evaluation


@dataclass
class JointResult:
    high: HighAgent
    low: LowAgent
    episodes: int
    log: list[dict] = field(default_factory=list)


def train_joint(high: HighAgent, low: LowAgent, episodes: int, seed: int, cfg: RunConfig | None = None, *,
                start_episode: int = 0, on_metrics: Callable[[dict], None] | None = None,
                on_checkpoint: Callable[[int], None] | None = None,
                on_episode: Callable[[EpisodeRecord], None] | None = None) -> JointResult:
    """Train both agents on full episodes.

    A metrics line is produced every ``metrics_every`` episodes once
    ``metrics_start`` episodes have run; ``on_checkpoint`` fires every
    ``checkpoint_every`` episodes.  A diverging loss raises
    :class:`~flipgrasp.approx.DivergedError` after the last checkpoint.
    """
    cfg = cfg or RunConfig()
    sim = Simulator(cfg.physics)
    rng = stage_rng(seed, "joint")
    # skip the draws of episodes already run so a resumed run sees new scenes
    scene_seeds = rng.integers(0, 2**31 - 1, size=start_episode + episodes)[start_episode:]
    stats = TrailingStats(cfg.train.window)
    a, tp = cfg.agent, cfg.train
    log: list[dict] = []
    losses: dict[str, list[float]] = {}
    for n in range(episodes):
        ep = start_episode + n
        eps = linear_epsilon(ep, a.eps_start, a.eps_end, a.eps_decay_episodes)
        record = run_episode(sim, high, low, cfg, int(scene_seeds[n]), mode="train", eps_high=eps,
                             eps_low=a.low_eps_joint, rng=rng, losses=losses)
        stats.add(record)
        if on_episode is not None:
            on_episode(record)
        count = ep + 1
        if count >= tp.metrics_start and count % tp.metrics_every == 0:
            line = {
                "episode": count,
                "completion_trailing": stats.completion(),
                "grasp_rate": stats.rate("grasp"),
                "flip_rate": stats.rate("flip"),
                "efficiency": stats.efficiency(),
                "epsilon": eps,
                "losses": {k: _mean(v) for k, v in sorted(losses.items())},
            }
            losses = {}
            log.append(line)
            if on_metrics is not None:
                on_metrics(line)
        if on_checkpoint is not None and tp.checkpoint_every > 0 and count % tp.checkpoint_every == 0:
            on_checkpoint(count)
    return JointResult(high, low, episodes, log)


def evaluate(high: HighAgent, low: LowAgent | None, n_episodes: int, placement: str, seed: int,
             cfg: RunConfig | None = None, manual_flip: bool = False,
             scenes: Callable[[int], WorkspaceState] | None = None) -> tuple[Metrics, list[EpisodeRecord]]:
    """Greedy evaluation (epsilon 0, masks on) over ``n_episodes`` scenes.

    ``scenes`` optionally builds the scene for episode k instead of the
    domain-randomised sampler.
    """
    if n_episodes <= 0:
        raise TrainingError("empty evaluation")
    cfg = cfg or RunConfig()
    sim = Simulator(cfg.physics)
    seeds = np.random.default_rng([seed, 99]).integers(0, 2**31 - 1, size=n_episodes)
    records = []
    for k, s in enumerate(seeds):
        state = scenes(k) if scenes is not None else None
        records.append(run_episode(sim, high, low, cfg, int(s), mode="eval", manual_flip=manual_flip,
                                   placement=placement, state=state))
    return metrics_from_records(records), records


def recompute_rewards(record: EpisodeRecord, cfg: RunConfig | None = None) -> list[float]:
    """High-level rewards implied by the logged outcomes."""
    cfg = cfg or RunConfig()
    out = []
    for s in record.steps:
        stub = PrimitiveOutcome(s.action["phi"], s.outcome, None, None)
        out.append(high_reward(stub, cfg.reward))
    return out


__all__ = [
    "CurriculumStage", "curriculum", "stage_by_id", "train_low", "LowTrainResult", "run_episode",
    "EpisodeRecord", "StepRecord", "Metrics", "metrics_from_records", "TrailingStats", "train_joint",
    "JointResult", "evaluate", "recompute_rewards", "observe", "TrainingError", "DivergedError", "GRASP",
]
