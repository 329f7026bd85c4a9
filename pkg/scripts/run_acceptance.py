"""Train the acceptance seeds and compare learned against manual flipping.

Runs ``flipgrasp train --stage all`` for each seed, then evaluates the
resulting agents on random placements with the learned and the manual flip.
The summary is cached under ``--out`` together with a fingerprint of the
package sources and the config, so the acceptance tests can reuse it.

    python scripts/run_acceptance.py --config configs/default.cfg --seeds 0 1 2
"""
import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from flipgrasp import cli
from flipgrasp.config import load_config
from flipgrasp.training import evaluate

ROOT = Path(__file__).resolve().parents[1]


def fingerprint(config_path) -> str:
    h = hashlib.sha256()
    for path in sorted((ROOT / "src" / "flipgrasp").glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    h.update(load_config(config_path).dumps().encode())
    return h.hexdigest()[:16]


def run_seed(config, seed, out, n_eval):
    run_dir = out / f"seed{seed}"
    t0 = time.perf_counter()
    code = cli.main(["train", "--config", str(config), "--stage", "all", "--seed", str(seed), "--out", str(run_dir)])
    train_seconds = time.perf_counter() - t0
    if code != 0:
        raise SystemExit(f"training seed {seed} failed with exit code {code}")
    curriculum = [json.loads(l) for l in (run_dir / "curriculum.jsonl").read_text().splitlines()]
    metrics = [json.loads(l) for l in (run_dir / "metrics.jsonl").read_text().splitlines()]
    cfg = load_config(config)
    cfg.seed = seed
    high, low, _ = cli.load_agents(run_dir / "joint.ckpt", cfg)
    learned, _ = evaluate(high, low, n_eval, "random", seed, cfg)
    manual, _ = evaluate(high, low, n_eval, "random", seed, cfg, manual_flip=True)
    return {
        "seed": seed,
        "train_seconds": train_seconds,
        "curriculum": {c["stage"]: c for c in curriculum},
        "max_completion_trailing": max((m["completion_trailing"] for m in metrics), default=None),
        "metrics": metrics,
        "eval_learned": learned.as_dict(),
        "eval_manual": manual.as_dict(),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "default.cfg"))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default=str(ROOT / "runs" / "acceptance"))
    ap.add_argument("-n", type=int, default=100, help="evaluation episodes per seed")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"fingerprint": fingerprint(args.config), "config": str(args.config), "n_eval": args.n, "seeds": []}
    for seed in args.seeds:
        res = run_seed(args.config, seed, out, args.n)
        summary["seeds"].append(res)
        print(f"seed {seed}: {res['train_seconds']:.0f}s, best trailing completion "
              f"{res['max_completion_trailing']}, flip learned {res['eval_learned']['flip_success_rate']} "
              f"vs manual {res['eval_manual']['flip_success_rate']}", flush=True)
    summary["total_train_seconds"] = sum(s["train_seconds"] for s in summary["seeds"])
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
