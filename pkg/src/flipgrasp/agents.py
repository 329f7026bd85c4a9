"""High-level primitive selector and low-level flip controller (both DQN).

The high-level network maps each rotated height map to three Q maps (push,
flip, grasp); Q values are arranged as ``(K, 3, H, W)`` indexed
``[rotation, primitive, y, x]``, the same layout as the primitive masks.
The low-level network maps a 5-vector state in the primitive's start frame
to 12 action values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import approx
from .approx import Adam, Network
from .config import AgentParams, PrimitiveParams
from .perception import PRIMITIVES, StartPose, rotate_map, wall_distance_stack
from .sim import ContactReading, EndEffectorState

HEIGHT_SCALE = 0.05  # m, height-map input scaling
# low-level feature scaling: metres, metres, radians, newtons, newtons
LOW_SCALE = np.array([0.1, 0.1, 0.35, 10.0, 10.0])
N_LOW_ACTIONS = 12


class AgentError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# actions and states


@dataclass(frozen=True)
class HighLevelAction:
    x: int
    y: int
    i: int
    phi: int

    @property
    def primitive(self) -> str:
        return PRIMITIVES[self.phi]

    def as_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "i": self.i, "phi": self.primitive}


@dataclass(frozen=True)
class LowLevelAction:
    """One of 12 increments (advance, lift, pitch) with index d*6 + z*3 + t."""

    index: int

    def __post_init__(self):
        if not 0 <= self.index < N_LOW_ACTIONS:
            raise AgentError(f"low-level action index {self.index} out of range")

    @classmethod
    def from_components(cls, d: int, z: int, t: int) -> "LowLevelAction":
        """``d``, ``z`` in {0, 1} select no move or one step; ``t`` in {0, 1, 2}
        selects pitch -r_y, 0, +r_y."""
        if d not in (0, 1) or z not in (0, 1) or t not in (0, 1, 2):
            raise AgentError("low-level action components out of range")
        return cls(d * 6 + z * 3 + t)

    @property
    def components(self) -> tuple[int, int, int]:
        return self.index // 6, (self.index // 3) % 2, self.index % 3

    def increments(self, params: PrimitiveParams) -> tuple[float, float, float]:
        d, z, t = self.components
        return d * params.a_d, z * params.a_z, (t - 1) * params.r_y

    def displacement(self, yaw: float, params: PrimitiveParams) -> tuple[float, float, float, float, float]:
        """End-effector displacement for a primitive started with heading ``yaw``."""
        d, z, t = self.increments(params)
        return (d * math.cos(yaw), d * math.sin(yaw), z, 0.0, t)


@dataclass(frozen=True)
class LowState:
    d: float
    z: float
    theta_y: float
    f_d: float
    f_max: float

    def vector(self) -> np.ndarray:
        return np.array([self.d, self.z, self.theta_y, self.f_d, self.f_max])


def project_low_state(ee: EndEffectorState, start: StartPose, contact: ContactReading) -> LowState:
    """End-effector pose relative to the start frame, plus the force readings."""
    c, s = math.cos(start.yaw), math.sin(start.yaw)
    dx, dy = ee.x - start.x, ee.y - start.y
    return LowState(dx * c + dy * s, ee.z - start.z, ee.pitch_y, contact.f_d, contact.f_max)


@dataclass
class HighTransition:
    obs: np.ndarray  # (H, W) observed height map
    action: HighLevelAction
    reward: float
    next_obs: np.ndarray
    next_masks: np.ndarray  # packed bits of the (K, 3, H, W) mask set
    terminal: bool

    @staticmethod
    def pack(masks: np.ndarray) -> np.ndarray:
        return np.packbits(masks.reshape(-1))

    def unpacked_masks(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.unpackbits(self.next_masks, count=n).astype(bool).reshape(shape)


@dataclass
class LowTransition:
    state: LowState
    action: int
    reward: float
    next_state: LowState
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring with uniform sampling without replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, item) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
        self._next = (self._next + 1) % self.capacity

    def items(self) -> list:
        """Contents from oldest to newest."""
        if len(self._items) < self.capacity:
            return list(self._items)
        return self._items[self._next:] + self._items[:self._next]

    def sample(self, batch: int, rng: np.random.Generator) -> list:
        if len(self._items) < batch:
            raise ValueError(f"cannot sample {batch} from {len(self._items)} transitions")
        idx = rng.choice(len(self._items), size=batch, replace=False)
        return [self._items[k] for k in idx]


# ---------------------------------------------------------------------------
# policies and backups


def linear_epsilon(episode: int, start: float, end: float, decay_episodes: int) -> float:
    if decay_episodes <= 0 or episode >= decay_episodes:
        return end
    return start + (end - start) * episode / decay_episodes


def select_high_action(qmaps: np.ndarray, masks: np.ndarray, epsilon: float,
                       rng: np.random.Generator, top_k: int = 10,
                       per_primitive: bool = False) -> HighLevelAction:
    """Greedy over unmasked entries, or with probability ``epsilon`` a uniform
    pick among the ``top_k`` best unmasked entries.

    With ``per_primitive`` the exploratory pick first draws a primitive
    uniformly, then a rotation uniformly (both among those with any
    admissible pixel), and takes one of the ``top_k`` entries of that single
    map.  A primitive whose Q values start low is still tried, and at every
    heading rather than only where its Q map happens to peak.  Ties go to the lowest flattened index.  One uniform
    draw is always consumed, so the random stream does not depend on Q values.
    """
    if qmaps.shape != masks.shape:
        raise AgentError(f"Q maps {qmaps.shape} and masks {masks.shape} differ in shape")
    admissible = np.flatnonzero(masks.reshape(-1))
    if admissible.size == 0:
        raise AgentError("no admissible action")
    values = qmaps.reshape(-1)[admissible]
    if rng.random() < epsilon:
        if per_primitive:
            rots, phis = np.unravel_index(admissible, qmaps.shape)[:2]
            present = np.unique(phis)
            keep = phis == present[int(rng.integers(present.size))]
            headings = np.unique(rots[keep])
            keep &= rots == headings[int(rng.integers(headings.size))]
            admissible, values = admissible[keep], values[keep]
        top = np.argsort(-values, kind="stable")[:top_k]
        flat = admissible[top[int(rng.integers(top.size))]]
    else:
        flat = admissible[int(np.argmax(values))]
    i, phi, y, x = np.unravel_index(flat, qmaps.shape)
    return HighLevelAction(int(x), int(y), int(i), int(phi))


def td_target_high(tr: HighTransition, target_net: Network, gamma_h: float) -> float:
    if tr.terminal:
        return float(tr.reward)
    q = high_qmaps(target_net, tr.next_obs)
    return float(tr.reward + gamma_h * masked_max(q, tr.unpacked_masks(q.shape)))


def td_target_low(tr: LowTransition, target_net: Network, gamma_l: float) -> float:
    if tr.terminal:
        return float(tr.reward)
    q = target_net.forward(low_features(tr.next_state)[None])[0]
    return float(tr.reward + gamma_l * float(q.max()))


def masked_max(q: np.ndarray, mask: np.ndarray) -> float:
    """Largest unmasked value; 0 when nothing is admissible (dead end)."""
    if not mask.any():
        return 0.0
    return float(q[mask].max())


def update_target(net: Network, target_net: Network) -> Network:
    target_net.copy_from(net)
    return target_net


# ---------------------------------------------------------------------------
# network inputs


def high_input(grid: np.ndarray, rotations=None, k: int = 16) -> np.ndarray:
    """Network input (n, 2, H, W) for the requested rotations of one height map.

    Channel 0 is the rotated height map, channel 1 the free distance to the
    wall straight ahead (constant per rotation, lets the small receptive
    field sense the boundary).
    """
    rotations = range(k) if rotations is None else rotations
    walls = wall_distance_stack(k, grid.shape[0])
    out = np.empty((len(rotations), 2) + grid.shape, dtype=np.float32)
    for row, i in enumerate(rotations):
        out[row, 0] = rotate_map(grid, i, k) / HEIGHT_SCALE
        out[row, 1] = walls[i]
    return out


def stack_input(stack: np.ndarray) -> np.ndarray:
    """Same as :func:`high_input` for an already rotated (K, H, W) stack."""
    k, n = stack.shape[0], stack.shape[1]
    out = np.empty((k, 2, n, n), dtype=np.float32)
    out[:, 0] = stack / HEIGHT_SCALE
    out[:, 1] = wall_distance_stack(k, n)
    return out


def high_qmaps(net: Network, grid: np.ndarray, k: int = 16) -> np.ndarray:
    return net.forward(high_input(grid, k=k))


def low_features(state: LowState) -> np.ndarray:
    return (state.vector() / LOW_SCALE).astype(np.float32)


# ---------------------------------------------------------------------------
# agents


class HighAgent:
    def __init__(self, params: AgentParams | None = None, seed: int = 0, k: int = 16):
        self.p = params or AgentParams()
        self.k = k
        self.net = Network(approx.fcn_spec(2, len(PRIMITIVES)), seed=seed)
        self.target = self.net.clone()
        self.opt = Adam(lr=self.p.lr_high)
        self.replay = ReplayBuffer(self.p.high_capacity)
        self.updates = 0

    def qmaps(self, stack: np.ndarray) -> np.ndarray:
        """Q maps (K, 3, H, W) for a rotated height-map stack."""
        return self.net.forward(stack_input(stack))

    def act(self, stack, masks, epsilon, rng) -> tuple[HighLevelAction, np.ndarray]:
        q = self.qmaps(stack)
        return select_high_action(q, masks, epsilon, rng, self.p.top_k, self.p.explore_per_primitive), q

    def store(self, tr: HighTransition) -> None:
        self.replay.add(tr)

    def ready(self) -> bool:
        return len(self.replay) >= max(self.p.high_batch, self.p.high_warmup)

    def update(self, rng: np.random.Generator) -> float | None:
        if not self.ready():
            return None
        batch = self.replay.sample(self.p.high_batch, rng)
        targets = np.array([tr.reward for tr in batch], dtype=np.float64)
        live = [n for n, tr in enumerate(batch) if not tr.terminal]
        if live:
            nxt = np.concatenate([high_input(batch[n].next_obs, k=self.k) for n in live])
            q = self.target.forward(nxt)
            shape = (self.k, len(PRIMITIVES)) + q.shape[2:]
            for row, n in enumerate(live):
                qn = q[row * self.k:(row + 1) * self.k]
                targets[n] += self.p.gamma_high * masked_max(qn, batch[n].unpacked_masks(shape))
        inputs = np.concatenate([high_input(tr.obs, [tr.action.i], self.k) for tr in batch])
        tq = np.zeros((len(batch), len(PRIMITIVES)) + inputs.shape[2:], dtype=np.float32)
        mask = np.zeros(tq.shape, dtype=bool)
        for n, tr in enumerate(batch):
            a = tr.action
            tq[n, a.phi, a.y, a.x] = targets[n]
            mask[n, a.phi, a.y, a.x] = True
        loss = approx.train_step(self.net, inputs, tq, mask, self.opt)
        self.updates += 1
        if self.updates % self.p.high_target_every == 0:
            update_target(self.net, self.target)
        return loss


class LowAgent:
    def __init__(self, params: AgentParams | None = None, seed: int = 0):
        self.p = params or AgentParams()
        self.net = Network(approx.mlp_spec(5, 64, N_LOW_ACTIONS), seed=seed)
        self.target = self.net.clone()
        self.opt = Adam(lr=self.p.lr_low)
        self.replay = ReplayBuffer(self.p.low_capacity)
        self.updates = 0

    def q_values(self, state: LowState) -> np.ndarray:
        return self.net.forward(low_features(state)[None])[0]

    def act(self, state: LowState, epsilon: float, rng: np.random.Generator) -> int:
        """Epsilon-greedy; one uniform draw is always consumed."""
        if rng.random() < epsilon:
            return int(rng.integers(N_LOW_ACTIONS))
        return int(np.argmax(self.q_values(state)))

    def store(self, tr: LowTransition) -> None:
        self.replay.add(tr)

    def ready(self) -> bool:
        return len(self.replay) >= max(self.p.low_batch, self.p.low_warmup)

    def update(self, rng: np.random.Generator) -> float | None:
        if not self.ready():
            return None
        batch = self.replay.sample(self.p.low_batch, rng)
        s = np.stack([low_features(tr.state) for tr in batch])
        s2 = np.stack([low_features(tr.next_state) for tr in batch])
        r = np.array([tr.reward for tr in batch])
        done = np.array([tr.terminal for tr in batch])
        tq_next = self.target.forward(s2)
        if self.p.low_double_q:
            # online net picks, target net scores
            pick = self.net.forward(s2, cache=False).argmax(axis=1)
            q_next = tq_next[np.arange(len(batch)), pick]
        else:
            q_next = tq_next.max(axis=1)
        targets = r + self.p.gamma_low * np.where(done, 0.0, q_next)
        tq = np.zeros((len(batch), N_LOW_ACTIONS), dtype=np.float32)
        mask = np.zeros(tq.shape, dtype=bool)
        rows = np.arange(len(batch))
        acts = np.array([tr.action for tr in batch])
        tq[rows, acts] = targets
        mask[rows, acts] = True
        loss = approx.train_step(self.net, s, tq, mask, self.opt)
        self.updates += 1
        if self.updates % self.p.low_target_every == 0:
            update_target(self.net, self.target)
        return loss
