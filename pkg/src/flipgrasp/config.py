"""Configuration dataclasses and the flat ``key = value`` config format.

Every tunable constant lives in one of the section dataclasses below.  A
config file addresses a field as ``section.field = value``; unknown keys and
values that violate a section's invariants are rejected with the offending
line number.
"""
from __future__ import annotations

import copy
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

WORKSPACE_SIZE = 0.448  # m, inner side of the walled square


class ConfigError(ValueError):
    """Raised for malformed or out-of-range configuration."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass
class PhysicsParams:
    contact_stiffness: float = 500.0  # N/m
    contact_force_cap: float = 50.0  # N
    gravity: float = 9.81  # m/s^2
    substep_len: float = 0.001  # m
    settle_tolerance: float = 1e-6  # rad
    push_compliance: float = 0.3
    finger_length: float = 0.05  # m, wrist-to-tip distance used for pitch motions
    pivot_resolution_deg: float = 0.25
    max_opening: float = 0.08  # m
    wall_delta: float = 0.01  # m, "near wall" threshold
    change_dist: float = 0.01  # m
    change_angle_deg: float = 5.0
    grasp_width_tol: float = 0.005  # m
    grasp_center_tol: float = 0.02  # m
    grasp_lift: float = 0.10  # m
    palm_clearance: float = 0.01  # m

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"physics.{f.name} must be > 0")


@dataclass
class NoiseSpec:
    gaussian_sigma: float = 0.002  # m
    n_dropout_min: int = 0
    n_dropout_max: int = 3
    dropout_size_min: int = 2  # pixels
    dropout_size_max: int = 6

    def validate(self) -> None:
        if self.gaussian_sigma < 0:
            raise ConfigError("noise.gaussian_sigma must be >= 0")
        if not 0 <= self.n_dropout_min <= self.n_dropout_max:
            raise ConfigError("noise dropout count range must satisfy 0 <= min <= max")
        if not 1 <= self.dropout_size_min <= self.dropout_size_max <= 64:
            raise ConfigError("noise dropout size range must satisfy 1 <= min <= max <= 64")


@dataclass
class DomainRandomizationSpec:
    length_min: float = 0.10
    length_max: float = 0.20
    width_min: float = 0.09
    width_max: float = 0.12
    height_min: float = 0.03
    height_max: float = 0.05
    mass_min: float = 0.05
    mass_max: float = 0.40
    mu_min: float = 0.2
    mu_max: float = 0.8
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def ranges(self) -> dict[str, tuple[float, float]]:
        return {
            "length": (self.length_min, self.length_max),
            "width": (self.width_min, self.width_max),
            "height": (self.height_min, self.height_max),
            "mass": (self.mass_min, self.mass_max),
            "mu": (self.mu_min, self.mu_max),
        }

    def validate(self) -> None:
        for name, (lo, hi) in self.ranges().items():
            if not 0 < lo <= hi:
                raise ConfigError(f"dr.{name} range must satisfy 0 < min <= max")
        if self.mu_max >= 2.0:
            raise ConfigError("dr.mu_max must be < 2")
        self.noise.validate()

    @classmethod
    def fixed(cls, length, width, height, mass, mu=0.5, noise: NoiseSpec | None = None):
        """Degenerate spec that always yields the same object."""
        return cls(length, length, width, width, height, height, mass, mass, mu, mu,
                   noise if noise is not None else NoiseSpec(0.0, 0, 0, 1, 1))


@dataclass
class PerceptionParams:
    grid: int = 64
    n_rotations: int = 16
    mask_height: float = 0.015  # m
    mask_radius: int = 6  # pixels
    clearance: float = 0.02  # m

    @property
    def resolution(self) -> float:
        return WORKSPACE_SIZE / self.grid

    def validate(self) -> None:
        if self.grid != 64 or self.n_rotations != 16:
            raise ConfigError("perception grid is fixed at 64x64 with 16 rotations")
        if self.mask_height <= 0 or self.mask_radius < 1 or self.clearance < 0:
            raise ConfigError("perception mask/clearance values out of range")


@dataclass
class RewardParams:
    sigma: float = 0.2
    w: float = 0.1  # m
    f_limit: float = 30.0  # N
    r_push_wall: float = 0.2
    r_push_change: float = 0.1
    r_flip: float = 1.0
    r_grasp: float = 1.0

    def validate(self, physics: PhysicsParams | None = None) -> None:
        if self.sigma <= 0 or self.w <= 0 or self.f_limit <= 0:
            raise ConfigError("reward.sigma, reward.w and reward.f_limit must be > 0")
        if physics is not None and self.f_limit >= physics.contact_force_cap:
            raise ConfigError("reward.f_limit must be below physics.contact_force_cap")


@dataclass
class PrimitiveParams:
    a_d: float = 0.005  # m
    a_z: float = 0.005  # m
    r_y_deg: float = 2.0
    horizon: int = 35
    push_stroke: float = 0.10  # m
    push_step: float = 0.005  # m
    push_stop_force: float = 5.0  # N
    manual_force_lo: float = 8.0  # N
    manual_force_hi: float = 10.0  # N
    manual_stage2_rise: float = 0.03  # m of lift before stage 3
    manual_gain: float = 0.5

    @property
    def r_y(self) -> float:
        return math.radians(self.r_y_deg)

    def validate(self) -> None:
        if self.a_d <= 0 or self.a_z <= 0 or self.r_y_deg <= 0 or self.horizon < 1:
            raise ConfigError("primitive step sizes must be > 0 and horizon >= 1")
        if not 0 < self.manual_force_lo < self.manual_force_hi:
            raise ConfigError("primitive manual force band must satisfy 0 < lo < hi")


@dataclass
class AgentParams:
    gamma_high: float = 0.5
    gamma_low: float = 0.95
    lr_high: float = 1e-4
    lr_low: float = 1e-4
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_episodes: int = 400
    low_eps_decay_episodes: int = 400
    low_eps_joint: float = 0.05
    high_capacity: int = 2000
    high_batch: int = 8
    low_capacity: int = 50000
    low_batch: int = 64
    high_target_every: int = 20
    low_target_every: int = 100
    high_warmup: int = 8
    low_warmup: int = 256
    top_k: int = 10
    explore_per_primitive: bool = True
    low_double_q: bool = True

    def validate(self) -> None:
        if not (0 <= self.gamma_high < 1 and 0 <= self.gamma_low < 1):
            raise ConfigError("agent discount factors must lie in [0, 1)")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ConfigError("agent epsilon schedule must satisfy 0 <= end <= start <= 1")
        if self.high_batch > self.high_capacity or self.low_batch > self.low_capacity:
            raise ConfigError("agent batch size exceeds replay capacity")
        if self.top_k < 1:
            raise ConfigError("agent.top_k must be >= 1")


@dataclass
class TrainParams:
    low_flush_episodes: int = 1500
    low_jitter_episodes: int = 1500
    joint_episodes: int = 2000
    gate: float = 0.7
    window: int = 100
    max_primitives: int = 10
    metrics_start: int = 500
    metrics_every: int = 50
    checkpoint_every: int = 500
    joint_placement: str = "random"
    freeze_low: bool = False
    low_updates_per_step: int = 2
    high_updates_per_step: int = 1

    def validate(self) -> None:
        if not 0 < self.gate <= 1:
            raise ConfigError("train.gate must lie in (0, 1]")
        if self.window < 1 or self.max_primitives < 1 or self.metrics_every < 1:
            raise ConfigError("train window/max_primitives/metrics_every must be >= 1")
        if self.joint_placement not in ("random", "close_to_wall"):
            raise ConfigError("train.joint_placement must be random or close_to_wall")


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    physics: PhysicsParams = field(default_factory=PhysicsParams)
    perception: PerceptionParams = field(default_factory=PerceptionParams)
    reward: RewardParams = field(default_factory=RewardParams)
    primitive: PrimitiveParams = field(default_factory=PrimitiveParams)
    agent: AgentParams = field(default_factory=AgentParams)
    train: TrainParams = field(default_factory=TrainParams)
    dr: DomainRandomizationSpec = field(default_factory=DomainRandomizationSpec)

    def validate(self) -> None:
        self.physics.validate()
        self.perception.validate()
        self.reward.validate(self.physics)
        self.primitive.validate()
        self.agent.validate()
        self.train.validate()
        self.dr.validate()

    # -- flat key/value view -------------------------------------------------

    def flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {"seed": self.seed, "output_dir": self.output_dir}
        for prefix, section in _sections(self):
            for f in dataclasses.fields(section):
                if f.name == "noise":
                    continue
                out[f"{prefix}.{f.name}"] = getattr(section, f.name)
        return out

    def set(self, key: str, raw: str, line: int | None = None) -> None:
        if key in ("seed", "output_dir"):
            target, name = self, key
        else:
            prefix, _, name = key.rpartition(".")
            sections = dict(_sections(self))
            if prefix not in sections:
                raise ConfigError(f"unknown key {key!r}", line)
            target = sections[prefix]
        names = {f.name: f for f in dataclasses.fields(target)}
        if name not in names or name == "noise":
            raise ConfigError(f"unknown key {key!r}", line)
        current = getattr(target, name)
        try:
            value = _coerce(raw, type(current))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", line) from None
        setattr(target, name, value)

    def dumps(self) -> str:
        lines = [f"{k} = {_format(v)}" for k, v in self.flat().items()]
        return "\n".join(lines) + "\n"


def _sections(cfg: RunConfig):
    return [
        ("physics", cfg.physics),
        ("perception", cfg.perception),
        ("reward", cfg.reward),
        ("primitive", cfg.primitive),
        ("agent", cfg.agent),
        ("train", cfg.train),
        ("dr", cfg.dr),
        ("noise", cfg.dr.noise),
    ]


def _coerce(raw: str, kind: type):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        value = float(raw)
        if not math.isfinite(value):
            raise ValueError("value must be finite")
        return value
    return raw


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse flat ``key = value`` text on top of ``base`` (defaults if omitted)."""
    cfg = copy.deepcopy(base) if base is not None else RunConfig()
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno)
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno)
        seen[key] = lineno
        cfg.set(key, value, lineno)
    try:
        cfg.validate()
    except ConfigError as exc:
        if exc.line is not None:
            raise
        raise ConfigError(str(exc), _culprit(cfg, base, seen)) from None
    return cfg


def _culprit(cfg: RunConfig, base: RunConfig | None, seen: dict[str, int]) -> int | None:
    """First line whose key, reset to its base value, makes the config valid."""
    ref = (base or RunConfig()).flat()
    for key, lineno in sorted(seen.items(), key=lambda kv: kv[1]):
        trial = copy.deepcopy(cfg)
        trial.set(key, _format(ref[key]))
        try:
            trial.validate()
        except ConfigError:
            continue
        return lineno
    return max(seen.values(), default=None)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def reference_markdown() -> str:
    """Render every config key with its default, for docs/config.md."""
    cfg = RunConfig()
    rows = ["| key | default |", "| --- | --- |"]
    rows += [f"| `{k}` | `{_format(v)}` |" for k, v in cfg.flat().items()]
    return "# Configuration reference\n\n" + UNITS_NOTE + "\n\n" + "\n".join(rows) + "\n"


UNITS_NOTE = (
    "Lengths are metres, forces newtons, masses kilograms, angles as suffixed "
    "(`_deg` = degrees, otherwise radians).  Pixel-valued keys say so in their "
    "name or comment.  Unknown keys are rejected."
)
