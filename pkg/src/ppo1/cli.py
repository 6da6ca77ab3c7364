"""Command-line entry point: ``ppo1 run | oracle | bench | worker-echo``."""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
import sys

from .exceptions import ConfigError, PPO1Error
from .surrogates import BUILTIN_SURROGATES, grid_oracle, make_surrogate, oracle_json

logger = logging.getLogger("ppo1")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def points_per_dim(total: int, dim: int) -> int:
    """Largest n with n**dim <= total."""
    n = max(2, int(round(total ** (1.0 / dim))))
    while n ** dim > total and n > 2:
        n -= 1
    return n


def cmd_run(args) -> int:
    from .harness.config import load_config, write_config_echo
    from .trainer import Trainer, report_optimum
    from .exceptions import InsufficientHistoryError

    cfg = load_config(args.config)
    if args.output_dir is not None:
        cfg = cfg.with_output_dir(args.output_dir)
    out = cfg.output_dir
    write_config_echo(cfg)
    external = cfg.environment.command is not None
    envs = [cfg.env_factory()(i) for i in range(cfg.trainer.n_envs)]
    try:
        # external workers enforce their own timeout and restart on expiry
        trainer = Trainer(cfg.trainer, envs, cfg.dispatch_mode,
                          None if external else cfg.worker_timeout_s, out)
        history = trainer.run()
    finally:
        for env in envs:
            env.close()
    report = {"env": cfg.environment.display_name, "episodes": len(history),
              "optimizer_steps": trainer.optimizer_steps, "labels": envs[0].action_spec.labels}
    try:
        report["optimum"] = report_optimum(history).to_dict()
    except InsufficientHistoryError as exc:
        report["optimum"] = None
        report["note"] = str(exc)
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(json.dumps(report["optimum"]))
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        env = make_surrogate(args.env)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.points < 2:
        raise ConfigError("--points must be >= 2")
    res = grid_oracle(env, points_per_dim(args.points, env.action_spec.dim))
    text = oracle_json(env, res)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import SUITES, run_suite

    if args.suite not in SUITES:
        raise ConfigError(f"unknown suite {args.suite!r}; choose from {sorted(SUITES)}")
    if args.seeds is not None and args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    try:
        results = run_suite(args.suite, args.seeds, args.scenario)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for r in results:
        print(r.summary())
    if args.output:
        Path(args.output).write_text(json.dumps([r.to_dict() for r in results], indent=2) + "\n")
    if args.strict and not all(r.passed for r in results):
        return EXIT_FAILURE
    return EXIT_OK


def cmd_worker_echo(args) -> int:
    from .harness.worker import serve

    try:
        kwargs = json.loads(args.kwargs) if args.kwargs else {}
        env = make_surrogate(args.env, **kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    return serve(env, delay=args.delay, delay_episode=args.delay_episode, delay_slot=args.delay_slot)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ppo1", description="Single-step PPO for open-loop control problems.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="train from a TOML run file")
    run.add_argument("--config", required=True, help="TOML run configuration")
    run.add_argument("--output-dir", help="override [run] output_dir")
    run.set_defaults(func=cmd_run)

    orc = sub.add_parser("oracle", help="grid-search a builtin surrogate")
    orc.add_argument("--env", required=True, choices=sorted(BUILTIN_SURROGATES))
    orc.add_argument("--points", type=int, default=10 ** 4,
                     help="total grid points, spread evenly over the dimensions")
    orc.add_argument("--output", help="also write the JSON here")
    orc.set_defaults(func=cmd_oracle)

    bench = sub.add_parser("bench", help="multi-seed convergence benchmarks")
    bench.add_argument("--suite", default="default")
    bench.add_argument("--seeds", type=int, help="seeds per scenario (default: per scenario)")
    bench.add_argument("--scenario", action="append", help="run only this scenario (repeatable)")
    bench.add_argument("--output", help="write per-seed results as JSON")
    bench.add_argument("--strict", action="store_true", help="exit 1 if any scenario fails")
    bench.set_defaults(func=cmd_bench)

    wk = sub.add_parser("worker-echo", help="serve a builtin surrogate over stdin/stdout")
    wk.add_argument("--env", required=True)
    wk.add_argument("--kwargs", help="JSON object of surrogate keyword arguments")
    wk.add_argument("--delay", type=float, default=0.0, help="seconds to sleep before answering")
    wk.add_argument("--delay-episode", type=int, help="only delay this episode")
    wk.add_argument("--delay-slot", type=int, help="only delay this environment slot")
    wk.set_defaults(func=cmd_worker_echo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"ppo1: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"ppo1: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PPO1Error, OSError, ValueError, FloatingPointError) as exc:
        print(f"ppo1: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
