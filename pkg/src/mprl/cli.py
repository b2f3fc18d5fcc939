"""Command line: train across seeds, evaluate snapshots, aggregate reports.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical abort
(partial progress.csv is kept).
"""

from __future__ import annotations

import argparse
import csv
import subprocess
import sys
from pathlib import Path

import numpy as np

from .config import (ConfigError, RunConfig, apply_overrides, config_to_ini,
                     load_config, parse_int_tuple)
from .learner import NumericalError
from .metrics import jerk_metrics, stratified_bootstrap_ci
from .mp import build_kernel
from .policy import load_policy, save_policy
from .nets import save_mlp
from .training import (PROGRESS_FIELDS, evaluate_policy, evaluate_step_policy,
                       mp_config, run_training)

_EVAL_METRICS = ("success_rate", "mean_return", "max_jerk", "mean_sq_jerk",
                 "dimensionless_jerk")


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _version_string() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here, capture_output=True, text=True, timeout=10)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except OSError:
        pass
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:
        return "unknown"


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = apply_overrides(cfg, args.set)
    extra = []
    if args.out:
        extra.append(f"run.out={args.out}")
    if args.seeds:
        # validate through the same parser as the config key
        parse_int_tuple(args.seeds)
        extra.append(f"run.seeds={args.seeds}")
    cfg = apply_overrides(cfg, extra)

    run_dir = Path(cfg.out)
    if (run_dir / "manifest.txt").exists() and not args.force:
        raise ConfigError(
            f"run directory {run_dir} already holds a run; pass --force "
            "to overwrite")
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(config_to_ini(cfg), encoding="utf-8")
    manifest = "\n".join([
        f"version = {_version_string()}",
        f"algorithm = {cfg.algorithm}",
        f"env = {cfg.env}",
        f"seeds = {','.join(str(s) for s in cfg.seeds)}",
    ]) + "\n"
    (run_dir / "manifest.txt").write_text(manifest, encoding="utf-8")

    for seed in cfg.seeds:
        seed_dir = run_dir / f"seed{seed}"
        seed_dir.mkdir(exist_ok=True)
        csv_path = seed_dir / "progress.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(PROGRESS_FIELDS)
            fh.flush()

            def on_iteration(row, _writer=writer, _fh=fh):
                _writer.writerow([_fmt(row[k]) for k in PROGRESS_FIELDS])
                _fh.flush()

            try:
                result = run_training(cfg, seed, on_iteration=on_iteration)
            except NumericalError as e:
                print(f"seed {seed}: numerical abort: {e}", file=sys.stderr)
                print(f"partial progress kept at {csv_path}", file=sys.stderr)
                return 3
        save_policy(result.policy, seed_dir / "policy.npz")
        if result.value_fn is not None:
            save_mlp(result.value_fn, seed_dir / "value.npz")
    print(run_dir)
    return 0


def _resolve_seed_dir(run_dir: Path) -> Path:
    if (run_dir / "policy.npz").exists():
        return run_dir
    seed_dirs = sorted(d for d in run_dir.glob("seed*")
                       if (d / "policy.npz").exists())
    if not seed_dirs:
        raise ConfigError(f"no policy snapshot under {run_dir}")
    if len(seed_dirs) > 1:
        raise ConfigError(
            f"{run_dir} holds {len(seed_dirs)} seeds; pass one seed "
            "directory explicitly")
    return seed_dirs[0]


def _load_run_config(run_dir: Path) -> RunConfig:
    for base in (run_dir, run_dir.parent):
        ini = base / "config.ini"
        if ini.exists():
            return load_config(str(ini))
    raise ConfigError(f"no config.ini found at or above {run_dir}")


def cmd_eval(args) -> int:
    seed_dir = _resolve_seed_dir(Path(args.run_dir))
    cfg = _load_run_config(seed_dir)
    policy = load_policy(seed_dir / "policy.npz")
    if args.episodes < 1:
        raise ConfigError("--episodes must be >= 1")
    if cfg.algorithm == "ppo-step":
        episodes = evaluate_step_policy(cfg, policy, args.seed, args.episodes)
        jerk_source = [e.executed for e in episodes]
    else:
        kernel = build_kernel(mp_config(cfg))
        episodes = evaluate_policy(cfg, policy, kernel, args.seed,
                                   args.episodes)
        jerk_source = [e.desired for e in episodes]
    dump_dir = seed_dir / "eval"
    dump_dir.mkdir(exist_ok=True)
    for i, ep in enumerate(episodes):
        payload = {"executed_pos": ep.executed.pos,
                   "executed_vel": ep.executed.vel,
                   "dt": np.float64(ep.executed.dt)}
        if ep.desired is not None:
            payload["desired_pos"] = ep.desired.pos
            payload["desired_vel"] = ep.desired.vel
        np.savez(dump_dir / f"episode{i}.npz", **payload)
    reports = [jerk_metrics(t) for t in jerk_source]
    values = {
        "success_rate": np.mean([ep.success for ep in episodes]),
        "mean_return": np.mean([ep.episode_return for ep in episodes]),
        "max_jerk": np.mean([r.max_jerk for r in reports]),
        "mean_sq_jerk": np.mean([r.mean_sq_jerk for r in reports]),
        "dimensionless_jerk": np.mean([r.dimensionless_jerk
                                       for r in reports]),
    }
    out_path = Path(args.out) if args.out else seed_dir / "eval.csv"
    _write_rows(out_path, ("metric", "value"),
                [(name, values[name]) for name in _EVAL_METRICS])
    print(out_path)
    return 0


def _final_window_scores(csv_path: Path, window: int = 10) -> dict:
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{csv_path} holds no iterations")
    tail = rows[-window:]
    return {
        "success_rate": float(np.mean([float(r["success_rate"])
                                       for r in tail])),
        "mean_return": float(np.mean([float(r["mean_return"])
                                      for r in tail])),
    }


def cmd_report(args) -> int:
    # scores per algorithm per metric, stratified by task (env name)
    grouped: dict = {}
    for run in args.run_dirs:
        run_dir = Path(run)
        cfg = _load_run_config(run_dir)
        csv_paths = sorted(run_dir.glob("seed*/progress.csv"))
        if (run_dir / "progress.csv").exists():
            csv_paths.insert(0, run_dir / "progress.csv")
        if not csv_paths:
            raise ConfigError(f"no progress.csv under {run_dir}")
        for path in csv_paths:
            scores = _final_window_scores(path)
            for metric, value in scores.items():
                by_task = grouped.setdefault((cfg.algorithm, metric), {})
                by_task.setdefault(cfg.env, []).append(value)
    out_rows = []
    for (algorithm, metric), per_task in sorted(grouped.items()):
        res = stratified_bootstrap_ci(per_task, n_boot=args.bootstrap,
                                      seed=args.seed)
        out_rows.append((algorithm, metric, res.point, res.ci_low,
                         res.ci_high, res.n_runs))
    out_path = Path(args.out) if args.out else Path("report.csv")
    _write_rows(out_path, ("algorithm", "metric", "point", "ci_low",
                           "ci_high", "n_runs"), out_rows)
    print(out_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mprl", description="Episodic movement-primitive RL runner")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train every configured seed")
    train.add_argument("--config", help="INI config path (defaults apply "
                                        "when omitted)")
    train.add_argument("--set", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="override one config entry (repeatable)")
    train.add_argument("--out", help="run directory (overrides run.out)")
    train.add_argument("--seeds", help="comma-separated seed list override")
    train.add_argument("--force", action="store_true",
                       help="allow writing into an existing run directory")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="deterministic mean-prediction rollouts")
    ev.add_argument("run_dir", help="run or seed directory with policy.npz")
    ev.add_argument("--episodes", type=int, default=20)
    ev.add_argument("--seed", type=int, default=0,
                    help="root seed for evaluation task sampling")
    ev.add_argument("--out", help="metrics CSV path (default: eval.csv in "
                                  "the seed directory)")
    ev.set_defaults(func=cmd_eval)

    rep = sub.add_parser("report", help="aggregate runs into IQM rows")
    rep.add_argument("run_dirs", nargs="+")
    rep.add_argument("--bootstrap", type=int, default=2000)
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--out", help="aggregate CSV path (default report.csv)")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
