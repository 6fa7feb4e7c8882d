"""
Command-line interface.

Subcommands::

    votecraft run CONFIG [--key=value ...]       run an experiment, write reports
    votecraft sweep CONFIG --axis A --levels ..  one experiment per level
    votecraft summarize REPORT [REPORT ...]      aggregate existing reports
    votecraft selftest                           closed form vs brute force

Exit codes: 0 success, 1 configuration or usage error (or a failed selftest), 2 I/O
error, 3 every trial degenerate.
"""

import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

from . import __version__
from .bench import (
    emit_report,
    format_summary,
    read_report,
    run_experiment,
    run_sweep,
    selftest,
    summarize,
    write_sweep,
)
from .config import SWEEP_AXES, ExperimentConfig, OutputConfig, resolve_threads
from .errors import ConfigError, InvalidInput, ReportIoError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_ALL_DEGENERATE = 3


def configure_logging(verbosity: int, quiet: bool) -> None:
    """Root logger setup: WARNING by default, -v for INFO, -vv for DEBUG."""
    if quiet:
        level = logging.ERROR
    else:
        level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(verbosity, 2)]
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


class VotecraftParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the configuration error code."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = VotecraftParser(
        prog="votecraft",
        description="Weighted vector-wise keypoint voting benchmarks.",
        epilog="Any config key can be overridden with --key=value, e.g. "
               "--scene.angular_noise_deg=5 or --trials=3.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="more logging (repeatable)")
    parser.add_argument("-q", "--quiet", action="store_true", help="errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run an experiment from a config file")
    run.add_argument("config", help="YAML experiment file")
    run.add_argument("--threads", type=int, default=None,
                     help="trial worker threads (overrides VOTECRAFT_THREADS)")
    run.add_argument("--csv", default=None, help="CSV report path")
    run.add_argument("--structured", default=None, help="structured (YAML) report path")

    sweep = commands.add_parser("sweep", help="run one experiment per level of a scene axis")
    sweep.add_argument("config", help="YAML experiment file")
    sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sweep.add_argument("--levels", required=True,
                       help="comma separated levels, e.g. 0,0.2,0.4,0.6,0.8")
    sweep.add_argument("--threads", type=int, default=None)
    sweep.add_argument("--out", default=None, help="sweep CSV path")

    summary = commands.add_parser("summarize", help="aggregate existing reports")
    summary.add_argument("reports", nargs="+", help="CSV or structured reports of one config")

    check = commands.add_parser("selftest", help="check closed-form solvers against oracles")
    check.add_argument("--instances", type=int, default=100)
    check.add_argument("--seed", type=int, default=0)
    return parser


def split_overrides(extra: Sequence[str]) -> Tuple[List[str], List[str]]:
    """Separate ``--key=value`` overrides from unrecognized arguments."""
    overrides, unknown = [], []
    for arg in extra:
        if arg.startswith("--") and "=" in arg:
            overrides.append(arg[2:])
        else:
            unknown.append(arg)
    return overrides, unknown


def _load_config(args: argparse.Namespace, overrides: List[str]) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config, overrides)
    threads = resolve_threads(args.threads, config.threads)
    return replace(config, threads=threads)


def cmd_run(args: argparse.Namespace, overrides: List[str]) -> int:
    config = _load_config(args, overrides)
    output = OutputConfig(csv=args.csv or config.output.csv,
                          structured=args.structured or config.output.structured)
    reports = run_experiment(config)
    if output.csv:
        emit_report(reports, "csv", output.csv)
    if output.structured:
        emit_report(reports, "structured", output.structured)
    print(format_summary(summarize(reports)))
    if all(r.degenerate for r in reports):
        logger.error("every trial was degenerate")
        return EXIT_ALL_DEGENERATE
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, overrides: List[str]) -> int:
    config = _load_config(args, overrides)
    try:
        levels = [float(v) for v in args.levels.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--levels must be comma separated numbers: {e}") from e
    rows = run_sweep(config, args.axis, levels)
    if args.out:
        write_sweep(rows, args.out)
    for row in rows:
        s = row.summary
        print(f"{row.axis}={row.level:g}  {s.algorithm:<9}  add_0_1d={s.add_0_1d:.4f}  "
              f"auc={s.auc_add:.4f}  failure_rate={s.failure_rate:.2f}")
    if all(row.summary.failures == row.summary.trials for row in rows):
        return EXIT_ALL_DEGENERATE
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    reports = []
    for path in args.reports:
        reports.extend(read_report(path))
    print(format_summary(summarize(reports)))
    return EXIT_OK


def cmd_selftest(args: argparse.Namespace) -> int:
    report = selftest(args.instances, args.seed)
    print(f"instances: {report.instances}")
    print(f"max objective gap: {report.max_objective_gap:.3e}")
    print(f"max position gap:  {report.max_position_gap:.3e} m")
    print(f"max rigid-fit error: {report.max_pose_error:.3e}")
    print(f"max ADD-S tree/brute gap: {report.max_metric_gap:.3e}")
    for failure in report.failures:
        print(f"FAIL {failure}")
    print("PASS" if report.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_CONFIG


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    overrides, unknown = split_overrides(extra)
    if unknown:
        parser.error(f"unrecognized arguments: {' '.join(unknown)}")
    if overrides and args.command not in ("run", "sweep"):
        parser.error(f"config overrides are only valid for run and sweep: {overrides}")
    configure_logging(args.verbose, args.quiet)

    try:
        if args.command == "run":
            return cmd_run(args, overrides)
        if args.command == "sweep":
            return cmd_sweep(args, overrides)
        if args.command == "summarize":
            return cmd_summarize(args)
        return cmd_selftest(args)
    except ReportIoError as e:
        logger.error("%s", e)
        return EXIT_IO
    except (ConfigError, InvalidInput) as e:
        logger.error("%s", e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
