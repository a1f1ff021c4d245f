"""Command-line entry point ``gossip-blocks``.

Exit codes: 0 success, 2 configuration error, 3 assumption warning under
``--strict``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dynamics import TrajectoryRecorder, make_rng, simulate
from .estimation import accuracy, exact_recovery, run_algorithm1
from .experiments import (
    ESTIMATOR_HEADER,
    KINDS,
    ConfigError,
    ExperimentConfig,
    _block_warning,
    _write,
    parse_config,
    run_experiment,
    to_csv,
)
from .graph_model import GossipNetwork, ModelError
from .oracle import oracle_report

EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--steps", type=int)
    p.add_argument("--strict", action="store_true",
                   help="exit with code 3 when the model cannot support recovery")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gossip-blocks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the gossip dynamics and dump the trajectory")
    _common(p)
    p.add_argument("--every", type=int, default=1, help="keep every k-th tick")

    p = sub.add_parser("estimate", help="run the estimator on a simulated or recorded trajectory")
    _common(p)
    p.add_argument("--trajectory", help="CSV trajectory (t,x_1,...) to read instead of simulating")
    p.add_argument("--a", type=float, default=1.0, help="step-size parameter")

    p = sub.add_parser("oracle", help="print closed-form quantities as JSON")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--strict", action="store_true")

    p = sub.add_parser("experiment", help="run a seeded experiment")
    p.add_argument("kind", choices=KINDS)
    _common(p)
    p.add_argument("--replications", type=int)
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes (GOSSIP_BLOCKS_THREADS overrides)")
    return parser


def _model_config(args, kind="single") -> ExperimentConfig:
    """Model-level commands accept a bare model config or an experiment config."""
    text = Path(args.config).read_text() if not args.config.lstrip().startswith("{") else args.config
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.config}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{args.config}: top level must be an object")
    if "kind" not in raw:
        raw = {"kind": kind, "model": raw, "seed": raw.pop("seed", None)}
        if raw["seed"] is None:
            raw["seed"] = getattr(args, "seed", None) if getattr(args, "seed", None) is not None else 0
    return parse_config(raw, seed=getattr(args, "seed", None), steps=getattr(args, "steps", None),
                        out=getattr(args, "out", None))


def _check(warnings, strict: bool) -> int:
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_ASSUMPTION if warnings and strict else 0


def cmd_simulate(args) -> int:
    cfg = _model_config(args)
    model = cfg.block_model()
    net = GossipNetwork.from_model(model)
    ss = np.random.SeedSequence(cfg.seed, spawn_key=(0,)).spawn(4)
    x0 = make_rng(ss[1]).uniform(*cfg.initial, size=net.assignment.n_r)
    rec = TrajectoryRecorder(x0, args.every)
    simulate(net.W, net.assignment.stubborn, net.q, net.stubborn_states, x0, cfg.steps, ss[0],
             observers=[rec])
    text = rec.to_csv()
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        _write(cfg.out, "trajectory.csv", text)
    return _check([w for w in (_block_warning(model),) if w], args.strict)


def _read_trajectory(path: str):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "t":
            raise ConfigError(f"{path}: expected a header starting with 't'")
        for lineno, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != len(header):
                raise ConfigError(f"{path}: line {lineno}: expected {len(header)} fields")
            yield int(parts[0]), np.array([float(v) for v in parts[1:]])


def cmd_estimate(args) -> int:
    cfg = _model_config(args)
    model = cfg.block_model()
    net = GossipNetwork.from_model(model)
    truth = net.assignment.labels
    warnings = [w for w in (_block_warning(model),) if w]
    if args.trajectory:
        pairs = list(_read_trajectory(args.trajectory))
        times = [t for t, _ in pairs]
        if times != list(range(len(times))):
            raise ConfigError("trajectory must hold every tick 0, 1, 2, ... (no decimation)")
        est_seed = np.random.SeedSequence(cfg.seed, spawn_key=(0,)).spawn(4)[2]
        snaps = run_algorithm1((x for _, x in pairs), net.assignment.stubborn,
                               net.assignment.witness_positions(), net.stubborn_states,
                               args.a, est_seed, snapshot_times=cfg.grid()
                               if cfg.steps else range(len(pairs)))
        rows = [(s.t, accuracy(s.labels, truth), exact_recovery(s.labels, truth),
                 s.w_s_hat, s.w_d_hat, s.skipped) for s in snaps if s.t > 0]
        table = to_csv(ESTIMATOR_HEADER, rows)
        if cfg.out is None:
            sys.stdout.write(table)
        else:
            _write(cfg.out, "estimator.csv", table)
        return _check(warnings, args.strict)
    cfg = parse_config({**_echo(cfg), "a": args.a})
    result = run_experiment(cfg)
    if cfg.out is None:
        sys.stdout.write(result.tables["estimator.csv"])
    return _check(result.warnings, args.strict)


def _echo(cfg: ExperimentConfig) -> dict:
    return {
        "kind": "single", "seed": cfg.seed, "steps": cfg.steps, "model": cfg.model,
        "model_seed": cfg.model_seed, "initial": cfg.initial, "snapshots": cfg.snapshots,
        "out": cfg.out,
    }


def cmd_oracle(args) -> int:
    args.seed = None
    cfg = _model_config(args)
    model = cfg.block_model()
    text = json.dumps(oracle_report(model), indent=2, sort_keys=True) + "\n"
    sys.stdout.write(text)
    _write(args.out, "oracle.json", text)
    return _check([w for w in (_block_warning(model),) if w], args.strict)


def cmd_experiment(args) -> int:
    cfg = parse_config(args.config, kind=args.kind, seed=args.seed, out=args.out,
                       steps=args.steps, replications=args.replications)
    result = run_experiment(cfg, args.threads)
    for name, path in result.files.items():
        if path is not None:
            print(path)
    if cfg.out is None:
        for text in result.tables.values():
            sys.stdout.write(text)
    return _check(result.warnings, args.strict)


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "oracle": cmd_oracle,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
