"""Command-line entry point: ``transparent-reward <command> [options]``.

Exit codes: 0 success, 1 invalid configuration or input, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .core import DatasetError
from .envlab import UnknownEnvironmentError
from .pipeline import ConfigError, RunConfig, Workspace

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("transparent_reward")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON run configuration (see README for keys and defaults)")
    p.add_argument("--seed", type=int, help="master seed; overrides the config")
    p.add_argument("--workers", type=int, help="threads for rollouts and density evaluation")
    p.add_argument("--out", help="output directory; overrides the config")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="transparent-reward",
                                     description="Learn small polynomial rewards from state-only demonstrations.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate-expert", parents=[common], help="train a ground-truth policy and write datasets")
    sub.add_parser("select", parents=[common], help="rank candidate monomials and keep the top k")
    sub.add_parser("irl", parents=[common], help="fit reward weights; write model, trace and evaluation")
    ev = sub.add_parser("evaluate", parents=[common], help="evaluate a reward model against held-out data")
    ev.add_argument("--model", help="reward model JSON (default: the run's own model)")
    ev.add_argument("--relearn", action="store_true", help="train a fresh policy on the model before evaluating")
    am = sub.add_parser("amend", parents=[common], help="scale one reward term by a factor")
    am.add_argument("--model", help="reward model JSON (default: the run's own model)")
    am.add_argument("--term", required=True, help="term index or name, e.g. 3 or 'z1^2'")
    am.add_argument("--factor", type=float, required=True)
    sub.add_parser("run-all", parents=[common], help="generate-expert, select and irl in one go")
    sub.add_parser("show-config", parents=[common], help="print the effective configuration")
    return parser


def _load_config(args) -> RunConfig:
    if args.workers is not None and args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    if args.seed is not None and args.seed < 0:
        raise ConfigError("--seed must be >= 0")
    return RunConfig.load(args.config, seed=args.seed, workers=args.workers, out=args.out)


def _dispatch(args) -> dict:
    cfg = _load_config(args)
    if args.command == "show-config":
        print(cfg.to_json())
        return {}
    ws = Workspace(cfg.out)
    if args.command == "generate-expert":
        return pipeline.generate_expert(cfg, ws)
    if args.command == "select":
        return pipeline.select(cfg, ws)
    if args.command == "irl":
        return pipeline.irl(cfg, ws)
    if args.command == "evaluate":
        return pipeline.evaluate_stage(cfg, ws, model_path=args.model, relearn=args.relearn)
    if args.command == "amend":
        model = args.model or ws.path("reward")
        return {"amended": pipeline.amend(model, args.term, args.factor)}
    if args.command == "run-all":
        return pipeline.run_all(cfg, ws)
    raise ConfigError(f"unknown command {args.command}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        written = _dispatch(args)
    except (ConfigError, DatasetError, UnknownEnvironmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - report any stage failure as a runtime error
        log.debug("stage failed", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if written:
        print(json.dumps({k: str(v) for k, v in written.items()}, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
