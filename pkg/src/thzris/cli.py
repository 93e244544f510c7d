"""Command-line entry point: simulate, dataset, train, evaluate, compare.

Exit status is 0 on success, 1 on bad arguments or invalid input and 2 on
file-system errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .policy.network import INIT_SCHEMES
from .policy.checkpoint import checkpoint_path, load_policy, save_policy
from .policy.train import METRICS, MODES, TrainConfig, evaluate, train, write_report
from .sim.config import SCHEDULERS, SimConfig
from .sim.dataset import generate_dataset, load_dataset
from .sim.episode import compare, run_episode

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_config(path, **overrides) -> SimConfig:
    cfg = SimConfig.load(path) if path else SimConfig()
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return cfg.replace(**overrides) if overrides else cfg


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config, seed=args.seed, scheduler=args.scheduler, horizon_t=args.horizon)
    policy = load_policy(args.model) if args.model else None
    trace = run_episode(cfg, policy, check_drift=args.check_drift)
    out = _out_dir(args.out)
    trace.write_csv(out / "trace.csv")
    trace.write_summary(out / "summary.json")
    if args.check_drift:
        print(f"drift-bound violations: {trace.drift_violations} (slot max rate), "
              f"{trace.drift_violations_horizon} (horizon max rate)")
    return EXIT_OK


def cmd_dataset(args) -> int:
    cfg = _load_config(args.config, seed=args.seed, horizon_t=args.horizon)
    out = Path(args.out)
    if out.suffix != ".jsonl":
        out = _out_dir(out) / "dataset.jsonl"
    counts = generate_dataset(cfg, args.episodes, out)
    print(json.dumps({"path": str(out), **counts}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    tc = TrainConfig(mode=args.mode, max_epochs=args.epochs, hidden_h=args.hidden,
                     learning_rate=args.lr, optimizer=args.optimizer, seed=args.seed,
                     patience=args.patience, rl_iterations=args.rl_iterations, init=args.init)
    episodes = load_dataset(args.data) if args.data else None
    policy, report = train(tc, episodes, cfg)
    out = _out_dir(args.out)
    write_report(report, out / "report.csv")
    save_policy(policy, checkpoint_path(out))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config(args.config)
    policy = load_policy(args.model)
    episodes = load_dataset(args.data) if args.data else None
    value = evaluate(policy, args.metric, episodes, cfg, split=args.split,
                     rollout_episodes=args.episodes)
    print(json.dumps({"metric": args.metric, "value": value}))
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_config(args.config, seed=args.seed)
    users = [int(u) for u in args.users.split(",")] if args.users else [cfg.n_users]
    configs = [cfg.replace(n_users=u) for u in users]
    kinds = [k.strip() for k in args.schedulers.split(",") if k.strip()]
    policy = load_policy(args.model) if args.model else None
    print(json.dumps(compare(configs, kinds, policy, args.episodes), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="thzris", description="THz RIS scheduling simulator and policy tools")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one episode and write trace.csv + summary.json")
    s.add_argument("--config", help="JSON config file (defaults if omitted)")
    s.add_argument("--seed", type=int)
    s.add_argument("--scheduler", choices=SCHEDULERS)
    s.add_argument("--horizon", type=int, help="override horizon_t")
    s.add_argument("--model", help="policy checkpoint (scheduler 'policy')")
    s.add_argument("--check-drift", action="store_true", help="count drift-bound violations")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("dataset", help="generate oracle-labeled episodes")
    d.add_argument("--config")
    d.add_argument("--episodes", type=int, required=True)
    d.add_argument("--seed", type=int)
    d.add_argument("--horizon", type=int, help="slots per episode")
    d.add_argument("--out", required=True, help="directory or .jsonl path")
    d.set_defaults(func=cmd_dataset)

    t = sub.add_parser("train", help="train a policy; writes report.csv and policy.ckpt")
    t.add_argument("--config")
    t.add_argument("--data", help="dataset .jsonl (required for clone modes)")
    t.add_argument("--mode", choices=MODES, default="clone")
    t.add_argument("--epochs", type=int, default=1000)
    t.add_argument("--hidden", type=int, default=128)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    t.add_argument("--patience", type=int, default=50)
    t.add_argument("--init", choices=INIT_SCHEMES, default="uniform", help="weight initialization")
    t.add_argument("--rl-iterations", type=int, default=50)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a trained policy")
    e.add_argument("--config")
    e.add_argument("--model", required=True)
    e.add_argument("--data")
    e.add_argument("--metric", choices=METRICS, required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--episodes", type=int, default=5, help="rollouts for gap metrics")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="compare schedulers against the oracle")
    c.add_argument("--config")
    c.add_argument("--schedulers", default="random,nearest")
    c.add_argument("--users", help="comma-separated user counts")
    c.add_argument("--episodes", type=int, default=1)
    c.add_argument("--seed", type=int)
    c.add_argument("--model")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        name = getattr(exc, "filename", None)
        msg = f"{exc.strerror}: {name}" if name and exc.strerror else str(exc)
        print(f"thzris: I/O error: {msg}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as exc:
        print(f"thzris: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
