"""
Command-line entry point ``lengthlab``.

Subcommands: verify, table, train, two-phase and sweep. Every artifact,
including the log file, is written into the ``--out`` directory. Exit codes:
0 when every check passes, 1 on a runtime failure, a divergence or a failed
check, 2 on a usage or configuration error.
"""
import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from .config import ExperimentSpec, default_experiment_path, load_experiment
from .core import Problem
from .env_train import (ProblemSet, dynamics_checks, lambda_sweep,
                        make_problem_set, train, two_phase)
from .errors import ConfigError, DivergenceError, ProblemSetError
from .grpo import advantage_table, drgrpo_magnitudes
from .lab_logger import close_logger, create_logger
from .plots import plot_length_loss, plot_phases, write_figure
from .save import save_frame, save_json
from .verify import SUITE_ALIASES, SUITES, run_suites
from .version import __version__

LOG_LEVEL_ENV = "LENGTHLAB_LOG_LEVEL"
LOGGER_NAME = "lengthlab_logger"
EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
# shipped experiment read when --config is absent
DEFAULT_EXPERIMENTS = {"sweep": "lambda_sweep"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lengthlab",
        description="Response-length dynamics of PPO and GRPO on a "
                    "synthetic problem MDP.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", default="results",
                       help="output directory (default: results)")
        p.add_argument("--seed", type=int, default=None,
                       help="base seed, overrides the configuration")

    p = sub.add_parser("verify", help="run the verification suites")
    common(p)
    p.add_argument("--suite", action="append",
                   choices=sorted(SUITES) + sorted(SUITE_ALIASES) + ["all"],
                   help="suite to run, repeatable (default: all)")
    p.add_argument("--instances", type=int, default=1000,
                   help="instances per property (default: 1000)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("table", help="closed-form group advantages")
    common(p)
    p.add_argument("--groups", type=int, nargs="+", default=[8, 16, 64, 256],
                   help="group sizes N (default: 8 16 64 256)")
    p.set_defaults(func=cmd_table)

    for name, func, help_text in (
            ("train", cmd_train, "one PPO or GRPO run"),
            ("two-phase", cmd_two_phase, "phase 1 on hard, phase 2 on "
                                         "occasionally solvable problems"),
            ("sweep", cmd_sweep, "PPO once per GAE lambda")):
        p = sub.add_parser(name, help=help_text)
        common(p)
        p.add_argument("--config", default=None,
                       help="experiment JSON (default: the shipped "
                            "experiment of the command)")
        p.add_argument("--plot", action="store_true",
                       help="also write length_loss.html")
        p.set_defaults(func=func)
    return parser


def _load(args: argparse.Namespace) -> ExperimentSpec:
    path = args.config or default_experiment_path(
        DEFAULT_EXPERIMENTS.get(args.command, "default_experiment"))
    spec = load_experiment(path, args.out, args.seed, LOGGER_NAME)
    return replace(spec, command=args.command)


def _validation_policy(spec: ExperimentSpec, temperature: float):
    # problem classes are measured on the shared, unconditioned logit table
    base = spec.reference or spec.policy
    return replace(base, condition_on_problem=False).build(spec.vocabulary(),
                                                           temperature)


def _build_policies(spec: ExperimentSpec, temperature: float,
                    problems: Sequence[Problem]):
    vocab = spec.vocabulary()
    policy = spec.policy.build(vocab, temperature, problems)
    reference = None if spec.reference is None else \
        spec.reference.build(vocab, temperature, problems)
    return policy, reference


def _problem_set(config, validation_policy, logger) -> ProblemSet:
    return make_problem_set(config, policy=validation_policy,
                            logger_name=logger.name)


def _report(out: Path, name: str, summary: dict, checks: dict,
            logger: logging.Logger) -> int:
    summary = dict(summary, checks=checks, passed=all(checks.values()))
    save_json(summary, out, name, logger.name)
    for check, ok in sorted(checks.items()):
        print(f"{check}: {'pass' if ok else 'FAIL'}")
    if not summary["passed"]:
        logger.error(f"Failed checks: {[c for c, ok in checks.items() if not ok]}")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_verify(args: argparse.Namespace, logger: logging.Logger) -> int:
    if args.instances < 1:
        raise ConfigError("--instances must be >= 1")
    seed = 0 if args.seed is None else args.seed
    reports = run_suites(args.suite or ["all"], args.instances, seed, logger.name)
    document = {"seed": seed, "instances": args.instances,
                "passed": all(r.passed for r in reports),
                "suites": [r.to_dict() for r in reports]}
    save_json(document, args.out, "verify_report", logger.name)
    for r in reports:
        print(f"{r.suite}: {'pass' if r.passed else 'FAIL'} "
              f"({r.failures} failures, max deviation {r.max_violation:.3e})")
    return EXIT_OK if document["passed"] else EXIT_FAILURE


def cmd_table(args: argparse.Namespace, logger: logging.Logger) -> int:
    if any(n < 2 for n in args.groups):
        raise ConfigError("--groups values must be >= 2")
    table = advantage_table(args.groups)
    save_frame(table, "csv", args.out, "advantage_table", logger.name)
    magnitudes = drgrpo_magnitudes(args.groups)
    save_frame(magnitudes["advantage"], "csv", args.out, "drgrpo_advantage",
               logger.name)
    save_frame(magnitudes["length"], "csv", args.out, "drgrpo_length", logger.name)
    print(table.to_string(index=False))
    return EXIT_OK


def cmd_train(args: argparse.Namespace, logger: logging.Logger) -> int:
    spec = _load(args)
    out = Path(args.out)
    problem_set = _problem_set(
        spec.problems, _validation_policy(spec, spec.train.temperature), logger)
    if spec.train.steps > 0 and len(problem_set) == 0:
        raise ConfigError("problems: training needs at least one problem")
    save_json(problem_set.to_dict(), out, "problems", logger.name)
    policy, reference = _build_policies(spec, spec.train.temperature,
                                        problem_set.problems)

    log = train(policy, problem_set, spec.train, reference=reference,
                logger_name=logger.name)
    save_frame(log.frame(), "csv", out, "train_log", logger.name)
    if log.group_stats:
        save_frame(log.group_frame(), "csv", out, "group_stats", logger.name)
    save_json(log.policy.to_dict(), out, "policy", logger.name)
    if args.plot:
        write_figure(plot_length_loss(log.frame(), logger_name=logger.name),
                     out, "length_loss", logger.name)

    summary = {"command": "train", "algorithm": log.algorithm,
               "steps": len(log),
               "final": log.records[-1] if log.records else None,
               "collapse": log.collapse.to_dict() if log.collapse else None}
    checks = dynamics_checks(log, problem_set,
                             accuracy_tolerance=spec.accuracy_tolerance)
    return _report(out, "summary", summary, checks, logger)


def cmd_two_phase(args: argparse.Namespace, logger: logging.Logger) -> int:
    spec = _load(args)
    out = Path(args.out)
    validation = _validation_policy(spec, spec.phase1.train.temperature)
    sets = {"phase1": _problem_set(spec.phase1.problems, validation, logger),
            "phase2": _problem_set(spec.phase2.problems, validation, logger)}
    for name, problem_set in sets.items():
        if len(problem_set) == 0:
            raise ConfigError(f"{name}.problems: the phase needs at least one problem")
        save_json(problem_set.to_dict(), out, f"problems_{name}", logger.name)
    policy, reference = _build_policies(
        spec, spec.phase1.train.temperature,
        sets["phase1"].problems + sets["phase2"].problems)

    result = two_phase(sets, {"phase1": spec.phase1.train,
                              "phase2": spec.phase2.train},
                       policy, seed=spec.phase2.train.seed,
                       accuracy_tolerance=spec.accuracy_tolerance,
                       reference=reference, logger_name=logger.name)
    save_frame(result.log1.frame(), "csv", out, "phase1_log", logger.name)
    save_frame(result.log2.frame(), "csv", out, "phase2_log", logger.name)
    save_json(result.log2.policy.to_dict(), out, "policy", logger.name)
    if args.plot:
        fig = plot_phases([result.log1.frame(), result.log2.frame()],
                          logger_name=logger.name)
        write_figure(fig, out, "length_loss", logger.name)

    s = result.summary
    checks = {"phase1_length_growth": s["phase1_length_growth"],
              "phase2_length_reduced": s["phase2_length_reduced"],
              "accuracy_preserved": s["accuracy_preserved"]}
    return _report(out, "summary", dict(s, command="two-phase"), checks, logger)


def cmd_sweep(args: argparse.Namespace, logger: logging.Logger) -> int:
    spec = _load(args)
    out = Path(args.out)
    problem_set = _problem_set(
        spec.problems, _validation_policy(spec, spec.train.temperature), logger)
    if spec.train.steps > 0 and len(problem_set) == 0:
        raise ConfigError("problems: the sweep needs at least one problem")
    policy, reference = _build_policies(spec, spec.train.temperature,
                                        problem_set.problems)
    result = lambda_sweep(problem_set, spec.lambdas, spec.train, policy,
                          reference=reference, logger_name=logger.name)
    save_frame(result.report, "csv", out, "sweep_report", logger.name)
    for lam, log in result.logs.items():
        save_frame(log.frame(), "csv", out, f"sweep_lam_{lam:g}", logger.name)
    if args.plot:
        for lam, log in result.logs.items():
            fig = plot_length_loss(log.frame(), f"PPO, lambda = {lam:g}",
                                   logger_name=logger.name)
            write_figure(fig, out, f"length_loss_lam_{lam:g}", logger.name)
    print(result.report.to_string(index=False))
    summary = {"command": "sweep",
               "report": result.report.to_dict(orient="records")}
    return _report(out, "summary", summary, {}, logger)


def _log_level() -> int:
    name = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    level = logging.getLevelName(name)
    if name not in ("DEBUG", "INFO", "WARNING", "ERROR") or not isinstance(level, int):
        raise ConfigError(f"{LOG_LEVEL_ENV} must be DEBUG, INFO, WARNING or "
                          f"ERROR, got {name}")
    return level


def main(argv: Optional[List[str]] = None) -> int:
    """Run the command line and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return EXIT_USAGE if exit_.code else EXIT_OK

    try:
        level = _log_level()
    except ConfigError as err:
        print(f"lengthlab: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    Path(args.out).mkdir(parents=True, exist_ok=True)
    logger = create_logger(LOGGER_NAME, level, args.out)
    logger.info(f"lengthlab {args.command} started")
    try:
        return args.func(args, logger)
    except ConfigError as err:
        logger.error(f"Configuration error: {err}")
        print(f"lengthlab: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, ProblemSetError) as err:
        logger.error(f"{type(err).__name__}: {err}")
        print(f"lengthlab: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_FAILURE
    finally:
        close_logger(LOGGER_NAME)


if __name__ == "__main__":
    sys.exit(main())
