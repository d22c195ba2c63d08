"""
Command-line interface.

    bdlab simulate --config run.ini
    bdlab sweep --config ladder.ini --scenario converge
    bdlab check --seed 3
    bdlab expand-ql --config rates.ini --sizes 64,256,1024

Exit status: 0 when every certification holds, 1 when one fails, 2 on a
configuration error.
"""
import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

import pandas as pd
from pydantic import ValidationError

from bdlab.checks import run_invariant_checks
from bdlab.errors import BDLabError, CertificationError
from bdlab.experiments import run_scenario
from bdlab.output import FLOAT_FORMAT, write_report
from bdlab.rates import compute_asymptotic_constants, expansion_table
from bdlab.schemas import ExperimentConfig, Scenario
from bdlab.settings import apply_overrides, load_config

logger = logging.getLogger("bdlab")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
DEFAULT_SIZES = "64,256,1024,4096,16384"
LADDER_SCENARIOS = [s.value for s in Scenario if s.uses_ladder]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment file (INI)")
    common.add_argument("--out", type=Path, help="output directory, overrides BDLAB_OUT_DIR and the file")
    common.add_argument("--seed", type=int, help="generator seed override")
    common.add_argument("--quiet", action="store_true", help="log warnings and errors only")

    parser = argparse.ArgumentParser(prog="bdlab", description="Becker–Döring coarsening numerics")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("simulate", parents=[common], help="run the configured scenario")
    sweep = commands.add_parser("sweep", parents=[common], help="run an eps-ladder scenario")
    sweep.add_argument("--scenario", choices=LADDER_SCENARIOS, help="ladder scenario to run")
    commands.add_parser("check", parents=[common], help="run the invariant suite")
    expand = commands.add_parser("expand-ql", parents=[common], help="tabulate the large-size expansion of Q_l")
    expand.add_argument("--sizes", default=DEFAULT_SIZES, help="comma-separated cluster sizes")
    expand.add_argument("--L-limit", dest="L_limit", type=int, default=10 ** 6, help="truncation of the constant C1")
    return parser


def configure_logging(quiet: bool) -> None:
    logging.basicConfig(
        level=logging.WARNING if quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logging.captureWarnings(True)


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        return load_config(args.config, out_dir=args.out, seed=args.seed)
    return apply_overrides(ExperimentConfig(), out_dir=args.out, seed=args.seed)


def cmd_simulate(config: ExperimentConfig) -> int:
    summary = run_scenario(config)
    if not summary.passed:
        raise CertificationError(summary.failures, f"scenario {config.scenario.value} failed certification")
    return EXIT_OK


def cmd_sweep(config: ExperimentConfig, scenario: Optional[str]) -> int:
    if scenario is not None:
        config = ExperimentConfig.model_validate({**config.model_dump(), "scenario": scenario})
    elif not config.scenario.uses_ladder:
        raise ValueError(f"sweep needs a ladder scenario ({', '.join(LADDER_SCENARIOS)}), got {config.scenario.value}")
    return cmd_simulate(config)


def cmd_check(config: ExperimentConfig) -> int:
    report = run_invariant_checks(config.seed, config.rates)
    path = write_report(report, Path(config.out_dir) / "check.json")
    logger.info("invariant report written path=%s", path)
    if not report.passed:
        raise CertificationError(report.failures, "invariant suite failed")
    return EXIT_OK


def cmd_expand(config: ExperimentConfig, sizes: str, L_limit: int) -> int:
    try:
        ls = [int(item) for item in sizes.split(",") if item.strip()]
    except ValueError as exc:
        raise ValueError(f"--sizes must be comma-separated integers: {exc}") from exc
    if not ls or min(ls) < 2:
        raise ValueError("--sizes needs cluster sizes >= 2")
    consts = compute_asymptotic_constants(config.rates, L_limit=L_limit)
    frame = pd.DataFrame([asdict(row) for row in expansion_table(config.rates, consts, ls)])
    frame["C1"] = consts.C1
    frame["F0"] = consts.F0
    path = Path(config.out_dir) / "expansion.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="")
    logger.info("expansion table written path=%s rows=%d C1=%.12g F0=%.12g", path, len(frame), consts.C1, consts.F0)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.quiet)
    try:
        config = resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(config)
        if args.command == "sweep":
            return cmd_sweep(config, args.scenario)
        if args.command == "check":
            return cmd_check(config)
        return cmd_expand(config, args.sizes, args.L_limit)
    except CertificationError as exc:
        logger.error("%s: %s", exc, ", ".join(exc.failures))
        return EXIT_FAILED
    except ValidationError as exc:
        logger.error("invalid configuration:\n%s", exc)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except BDLabError as exc:
        logger.error("run failed: %s", exc)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
