"""Command-line interface.

Subcommands: ``train``, ``eval``, ``navmatrix``, ``model-error``, and
``export-metrics``.  Usage problems (unknown flags, missing files, malformed
configs) exit with status 2 and a message naming the problem; runtime
failures exit 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from ..errors import ConfigurationError, MunlabError
from .checkpoint import load_checkpoint
from .config import parse_config
from .evaluation import (
    build_probe,
    evaluate_success,
    model_error_report,
    navigation_matrix,
    report_to_csv,
)
from .training import run_training


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="munlab",
        description="Goal-conditioned model-based RL laboratory.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training experiment")
    p_train.add_argument("--config", required=True, help="key = value config file")
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_train.add_argument("--out", required=True, help="output directory")

    p_eval = sub.add_parser("eval", help="evaluate a checkpointed policy")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, default=20)
    p_eval.add_argument("--seed", type=int, default=0)

    p_nav = sub.add_parser("navmatrix", help="success matrix over waypoint pairs")
    p_nav.add_argument("--checkpoint", required=True)
    p_nav.add_argument("--waypoints", required=True, help="JSON list of goal vectors")
    p_nav.add_argument("--reps", type=int, default=10)
    p_nav.add_argument("--seed", type=int, default=0)
    p_nav.add_argument("--out", default=None, help="write the matrix CSV here")

    p_err = sub.add_parser("model-error", help="model error table over checkpoints")
    p_err.add_argument("--checkpoints", nargs="+", required=True)
    p_err.add_argument("--probe", default=None,
                       help="npz with states/actions/next_states (default: pool "
                            "a probe from the checkpoints' buffers)")
    p_err.add_argument("--probe-size", type=int, default=1000)
    p_err.add_argument("--trajectories", type=int, default=10,
                       help="real segments per buffer for the compounding error")
    p_err.add_argument("--seed", type=int, default=0)
    p_err.add_argument("--out", default=None)

    p_exp = sub.add_parser("export-metrics", help="mirror a run's metrics.csv as JSON")
    p_exp.add_argument("--run", required=True, help="run directory with metrics.csv")
    return parser


def _cmd_train(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    os.makedirs(args.out, exist_ok=True)
    ts = run_training(cfg, out_dir=args.out)
    last = ts.metrics[-1] if ts.metrics else None
    rate = last.success_rate if last else float("nan")
    print(f"trained {ts.iteration} iterations ({ts.env_steps} env steps), "
          f"final success_rate {rate!r}; outputs in {args.out}")
    return 0


def _cmd_eval(args) -> int:
    ts = load_checkpoint(args.checkpoint)
    rng = np.random.default_rng(args.seed)
    rate = evaluate_success(ts.policy, ts.config.env_id, args.episodes, rng)
    print(f"success_rate {rate!r} over {args.episodes} episodes on {ts.config.env_id}")
    return 0


def _cmd_navmatrix(args) -> int:
    ts = load_checkpoint(args.checkpoint)
    with open(args.waypoints, encoding="utf-8") as fh:
        waypoints = json.load(fh)
    rng = np.random.default_rng(args.seed)
    report = navigation_matrix(ts.policy, ts.config.env_id, waypoints, args.reps, rng)
    lines = [",".join(repr(float(v)) for v in row) for row in report.matrix]
    text = "\n".join(lines) + f"\nmean_off_diagonal,{report.mean_off_diagonal!r}\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def _cmd_model_error(args) -> int:
    states = [load_checkpoint(path) for path in args.checkpoints]
    names = []
    for path, ts in zip(args.checkpoints, states):
        base = os.path.splitext(os.path.basename(path))[0]
        name = f"{ts.config.method}:{base}"
        while name in names:
            name += "+"
        names.append(name)
    rng = np.random.default_rng(args.seed)
    if args.probe is not None:
        with np.load(args.probe) as data:
            probe = (data["states"], data["actions"], data["next_states"])
    else:
        probe = build_probe([ts.buffer for ts in states], args.probe_size, rng)
    trajectories = []
    for ts in states:
        for ep in ts.buffer.episodes("egc")[-args.trajectories:]:
            h = min(ts.config.compound_h, len(ep))
            if h >= 1:
                trajectories.append((ep.states[: h + 1], ep.actions[:h]))
    report = model_error_report(
        {name: ts.model for name, ts in zip(names, states)}, probe, trajectories,
        env_id=states[0].config.env_id,
    )
    text = report_to_csv(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")
    return 0


def _cmd_export_metrics(args) -> int:
    path = os.path.join(args.run, "metrics.csv")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = [
            {k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
            for row in reader
        ]
    out_path = os.path.join(args.run, "metrics.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
        fh.write("\n")
    print(f"wrote {out_path} ({len(rows)} rows)")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "navmatrix": _cmd_navmatrix,
    "model-error": _cmd_model_error,
    "export-metrics": _cmd_export_metrics,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles usage errors (exit 2) and --help
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigurationError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"munlab: error: {exc}", file=sys.stderr)
        return 2
    except MunlabError as exc:
        print(f"munlab: error: {exc}", file=sys.stderr)
        return 1


def entry_point() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    entry_point()
