"""Command-line entry point.

    flipgrasp train --config run.cfg --stage all --seed 7
    flipgrasp eval --checkpoint runs/x/joint.ckpt -n 100 --placement random
    flipgrasp export --checkpoint runs/x/joint.ckpt --what qmaps --step 0 --out img/
    flipgrasp config-reference > docs/config.md

Exit codes: 0 success, 2 configuration or usage error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import approx
from .agents import HighAgent, LowAgent
from .config import ConfigError, DomainRandomizationSpec, RunConfig, load_config, parse_config, reference_markdown
from .perception import PRIMITIVES, HeightMap, PerceptionError, pixel_to_pose
from .primitives import execute
from .sim import SimError, Simulator
from .training import (EpisodeRecord, TrainingError, evaluate, observe, stage_by_id, train_joint, train_low)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# checkpoints


def _expected(cfg: RunConfig) -> dict[str, list]:
    return {"high": approx.fcn_spec(2, len(PRIMITIVES)), "low": approx.mlp_spec(5, 64, 12)}


def save_agents(path: Path, meta: dict, low: LowAgent, high: HighAgent | None = None) -> None:
    nets = {"low": low.net}
    if high is not None:
        nets["high"] = high.net
    approx.save(nets, path, meta)


def load_agents(path, cfg: RunConfig, need_high: bool = True) -> tuple[HighAgent | None, LowAgent, dict]:
    ck = approx.load(path, _expected(cfg))
    if "low" not in ck.nets:
        raise approx.CheckpointError("checkpoint lacks a low-level network")
    low = LowAgent(cfg.agent, seed=cfg.seed)
    low.net.copy_from(ck.nets["low"])
    low.target.copy_from(ck.nets["low"])
    high = None
    if "high" in ck.nets:
        high = HighAgent(cfg.agent, seed=cfg.seed)
        high.net.copy_from(ck.nets["high"])
        high.target.copy_from(ck.nets["high"])
    elif need_high:
        raise approx.CheckpointError("checkpoint lacks a high-level network (train the joint stage first)")
    return high, low, ck.meta


def _config_for(args, ckpt_meta: dict | None = None) -> RunConfig:
    """Config from --config, else the snapshot stored in a checkpoint, else defaults."""
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif ckpt_meta and "config" in ckpt_meta:
        cfg = parse_config(ckpt_meta["config"])
    else:
        cfg = RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


# ---------------------------------------------------------------------------
# train


def _jsonl(path: Path, obj, mode="a") -> None:
    with path.open(mode) as fh:
        fh.write(json.dumps(obj, sort_keys=True) + "\n")


def record_lines(record: EpisodeRecord, episode: int) -> list[dict]:
    return [dict(s.as_dict(), episode=episode, seed=record.seed) for s in record.steps]


def cmd_train(args) -> int:
    if not Path(args.config).is_file():
        raise UsageError(f"config file not found: {args.config}")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.output_dir = args.out
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(cfg.dumps())
    snapshot = cfg.dumps()
    metrics_path = out / "metrics.jsonl"

    start_episode = 0
    low = high = None
    if args.resume:
        high, low, meta = load_agents(args.resume, cfg, need_high=False)
        if meta.get("stage") == "joint":
            start_episode = int(meta.get("episode", 0))
        elif args.stage == "low":
            raise UsageError("resuming a finished low-level stage has nothing to do")
    elif args.stage != "low":
        for stale in (metrics_path, out / "episodes.jsonl"):
            stale.unlink(missing_ok=True)

    if args.stage in ("low", "all") and low is None:
        low = LowAgent(cfg.agent, seed=cfg.seed)
        offset = 0
        stages = {}
        for sid, budget in (("low_flush", cfg.train.low_flush_episodes),
                            ("low_jitter", cfg.train.low_jitter_episodes)):
            res = train_low(stage_by_id(sid, cfg.train.gate), budget, cfg.seed, cfg, low, offset)
            offset += res.episodes
            stages[sid] = {"status": res.status, "episodes": res.episodes,
                           "final_trailing": res.curve[-1] if res.curve else None}
            _jsonl(out / "curriculum.jsonl", dict(stages[sid], stage=sid))
            print(f"{sid}: {res.status} after {res.episodes} episodes", flush=True)
        save_agents(out / "low.ckpt", {"stage": "low", "curriculum": stages, "config": snapshot}, low)

    if args.stage in ("joint", "all"):
        if low is None:
            src = Path(args.low) if args.low else out / "low.ckpt"
            if not src.is_file():
                raise UsageError(f"joint training needs a low-level checkpoint; {src} not found")
            _, low, _ = load_agents(src, cfg, need_high=False)
        if high is None:
            high = HighAgent(cfg.agent, seed=cfg.seed)
        budget = cfg.train.joint_episodes - start_episode
        if budget <= 0:
            print(f"joint stage already complete at episode {start_episode}")
            return EXIT_OK
        records = out / "episodes.jsonl"
        counter = [start_episode]

        def on_episode(rec):
            counter[0] += 1
            with records.open("a") as fh:
                for line in record_lines(rec, counter[0]):
                    fh.write(json.dumps(line, sort_keys=True) + "\n")

        def on_metrics(line):
            _jsonl(metrics_path, line)
            print(json.dumps(line, sort_keys=True), flush=True)

        def on_checkpoint(count):
            save_agents(out / "joint.ckpt", {"stage": "joint", "episode": count, "config": snapshot}, low, high)

        try:
            train_joint(high, low, budget, cfg.seed, cfg, start_episode=start_episode,
                        on_metrics=on_metrics, on_checkpoint=on_checkpoint, on_episode=on_episode)
        except approx.DivergedError as exc:
            print(f"error: training diverged ({exc}); last checkpoint kept", file=sys.stderr)
            return EXIT_RUNTIME
        save_agents(out / "joint.ckpt", {"stage": "joint", "episode": cfg.train.joint_episodes,
                                         "config": snapshot}, low, high)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def eval_objects(dr: DomainRandomizationSpec) -> list[DomainRandomizationSpec]:
    """Four fixed objects at the corners of the size/mass ranges."""
    out = []
    for length, width, height in ((dr.length_min, dr.width_min, dr.height_min),
                                  (dr.length_max, dr.width_max, dr.height_max)):
        for mass in (dr.mass_min, dr.mass_max):
            spec = DomainRandomizationSpec.fixed(length, width, height, mass, (dr.mu_min + dr.mu_max) / 2)
            spec.noise = dr.noise
            out.append(spec)
    return out


def format_table(rows: list[tuple[str, dict]]) -> str:
    keys = ("completion_rate", "grasp_success_rate", "flip_success_rate", "action_efficiency", "episodes")
    head = f"{'set':<12}" + "".join(f"{k:>20}" for k in keys)
    lines = [head, "-" * len(head)]
    for name, m in rows:
        cells = "".join(f"{'-' if m[k] is None else format(m[k], '.3f') if isinstance(m[k], float) else m[k]:>20}"
                        for k in keys)
        lines.append(f"{name:<12}" + cells)
    return "\n".join(lines)


def cmd_eval(args) -> int:
    if args.epsilon is not None:
        raise UsageError("evaluation is greedy; an epsilon override is not allowed")
    if args.n <= 0:
        raise UsageError("-n must be positive")
    meta = approx.load(args.checkpoint).meta
    cfg = _config_for(args, meta)
    high, low, _ = load_agents(args.checkpoint, cfg)
    seed = cfg.seed if args.seed is None else args.seed
    sets = [("all", cfg)]
    if args.per_object:
        sets = []
        for j, spec in enumerate(eval_objects(cfg.dr)):
            c = copy.deepcopy(cfg)
            c.dr = spec
            sets.append((f"object{j}", c))
    rows, lines = [], []
    for name, c in sets:
        metrics, records = evaluate(high, low, args.n, args.placement, seed, c, manual_flip=args.manual_flip)
        rows.append((name, metrics.as_dict()))
        for k, rec in enumerate(records):
            lines += [dict(l, set=name) for l in record_lines(rec, k + 1)]
    print(format_table(rows))
    summary = {"placement": args.placement, "manual_flip": args.manual_flip, "seed": seed,
               "results": {name: m for name, m in rows}}
    print(json.dumps(summary, sort_keys=True))
    if args.records:
        path = Path(args.records)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(json.dumps(l, sort_keys=True) + "\n" for l in lines))
    return EXIT_OK


# ---------------------------------------------------------------------------
# export


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w)


def to_gray(a: np.ndarray, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    lo = float(a.min()) if lo is None else lo
    hi = float(a.max()) if hi is None else hi
    if hi - lo < 1e-12:
        return np.full(a.shape, 128 if lo != 0 else 0, dtype=np.uint8)
    return np.clip(np.round((a - lo) / (hi - lo) * 255), 0, 255).astype(np.uint8)


def tile(tiles: np.ndarray, gap: int = 1, fill: int = 255) -> np.ndarray:
    """Lay out (rows, cols, H, W) tiles with ``gap``-pixel separators."""
    rows, cols, h, w = tiles.shape
    out = np.full((rows * (h + gap) - gap, cols * (w + gap) - gap), fill, dtype=np.uint8)
    for r in range(rows):
        for c in range(cols):
            out[r * (h + gap):r * (h + gap) + h, c * (w + gap):c * (w + gap) + w] = tiles[r, c]
    return out


def qmap_tiles(qmaps: np.ndarray, masks: np.ndarray | None = None) -> np.ndarray:
    """(K, 3, H, W) grayscale tiles, min-max normalised per primitive.

    The best pixel of each primitive is marked white with a black ring.
    """
    k, n_prim, h, w = qmaps.shape
    tiles = np.zeros(qmaps.shape, dtype=np.uint8)
    for p in range(n_prim):
        q = qmaps[:, p]
        tiles[:, p] = to_gray(q)
        scored = q if masks is None or not masks[:, p].any() else np.where(masks[:, p], q, -np.inf)
        i, y, x = np.unravel_index(int(np.argmax(scored)), scored.shape)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w:
                    tiles[i, p, yy, xx] = 0
        tiles[i, p, y, x] = 255
    return tiles


def trace_to_step(sim: Simulator, high: HighAgent, low: LowAgent, cfg: RunConfig, seed: int, placement: str,
                  step: int, actions: list[dict] | None = None):
    """Replay an episode (greedy, or the recorded ``actions``) up to ``step``."""
    state = sim.reset(cfg.dr, placement, seed=seed)
    grid, stack, masks = observe(state, cfg, [seed, 0])
    policy = lambda s: low.act(s, 0.0, np.random.default_rng(0))  # noqa: E731
    limit = len(actions) if actions is not None else cfg.train.max_primitives
    if not 0 <= step < max(limit, 1) or (actions is not None and step > len(actions)):
        raise UsageError(f"step {step} out of range (episode has {limit} steps)")
    rng = np.random.default_rng(seed)
    for t in range(step):
        if actions is not None:
            a = actions[t]
            phi = PRIMITIVES.index(a["phi"])
            x, y, i = a["x"], a["y"], a["i"]
        else:
            act, _ = high.act(stack, masks, 0.0, rng)
            phi, x, y, i = act.phi, act.x, act.y, act.i
        try:
            start = pixel_to_pose(x, y, i, HeightMap(grid, cfg.perception.resolution),
                                  cfg.perception.n_rotations, cfg.perception.clearance)
        except PerceptionError:
            start = None
        if start is not None:
            out = execute(phi, sim, state, start, low_policy=policy, params=cfg.primitive, rewards=cfg.reward)
            state = out.after
        grid, stack, masks = observe(state, cfg, [seed, t + 1])
    return grid, stack, masks, high.qmaps(stack)


def cmd_export(args) -> int:
    meta = approx.load(args.checkpoint).meta
    cfg = _config_for(args, meta)
    high, low, _ = load_agents(args.checkpoint, cfg)
    actions, seed = None, (cfg.seed if args.seed is None else args.seed)
    if args.record:
        lines = [json.loads(l) for l in Path(args.record).read_text().splitlines() if l.strip()]
        ep = args.episode if args.episode is not None else lines[0]["episode"] if lines else None
        lines = [l for l in lines if l.get("episode") == ep]
        if not lines:
            raise UsageError(f"record has no episode {ep}")
        seed = int(lines[0]["seed"])
        actions = [l["action"] for l in sorted(lines, key=lambda l: l["step"])]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid, stack, masks, q = trace_to_step(Simulator(cfg.physics), high, low, cfg, seed, args.placement,
                                          args.step, actions)
    written = [out / "heightmap.pgm"]
    write_pgm(written[0], to_gray(grid, 0.0, max(float(grid.max()), 1e-6)))
    if args.what == "qmaps":
        path = out / "qmaps.pgm"
        write_pgm(path, tile(qmap_tiles(q, masks)))
        written.append(path)
    elif args.what == "masks":
        path = out / "masks.pgm"
        write_pgm(path, tile(masks.astype(np.uint8) * 255, fill=128))
        written.append(path)
    for p in written:
        print(p)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="flipgrasp", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("train", help="run curriculum and/or joint training")
    t.add_argument("--config", required=True, help="flat key = value config file")
    t.add_argument("--stage", choices=("low", "joint", "all"), default="all")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory (overrides output_dir)")
    t.add_argument("--resume", help="continue from a checkpoint")
    t.add_argument("--low", help="low-level checkpoint for --stage joint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a joint checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("-n", type=int, default=10, help="episodes (per object with --per-object)")
    e.add_argument("--placement", choices=("random", "close_to_wall"), default="random")
    e.add_argument("--manual-flip", action="store_true", help="use the hand-designed flip controller")
    e.add_argument("--per-object", action="store_true", help="evaluate four fixed test objects separately")
    e.add_argument("--config")
    e.add_argument("--seed", type=int)
    e.add_argument("--records", help="write episode records (JSON lines) here")
    e.add_argument("--epsilon", type=float, help=argparse.SUPPRESS)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="write height map, Q map or mask images for one step")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--what", choices=("heightmap", "qmaps", "masks"), default="qmaps")
    x.add_argument("--step", type=int, default=0)
    x.add_argument("--record", help="episode record to replay instead of a greedy rollout")
    x.add_argument("--episode", type=int, help="episode number inside --record")
    x.add_argument("--placement", choices=("random", "close_to_wall"), default="random")
    x.add_argument("--config")
    x.add_argument("--seed", type=int)
    x.add_argument("--out", default="export")
    x.set_defaults(func=cmd_export)

    r = sub.add_parser("config-reference", help="print the configuration reference (markdown)")
    r.set_defaults(func=lambda args: (print(reference_markdown(), end=""), EXIT_OK)[1])
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (approx.CheckpointError, TrainingError, SimError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
