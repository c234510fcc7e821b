"""
Command-line entrypoint: mfglab <command> --config scenario.toml [options]
"""
import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from mfglab import __version__
from mfglab.config import settings
from mfglab.errors import ConfigError, MfgLabError
from mfglab.models import ScenarioConfig
from mfglab.services import workflows

logger = logging.getLogger(__name__)


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or settings.LOG).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfglab", description="Mean field game master equation laboratory.")
    parser.add_argument("--version", action="version", version=f"mfglab {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, help="scenario TOML file")
        sub.add_argument("--out", default=None, help="output directory (default: config output_dir or MFG_OUTPUT_ROOT/<name>)")
        sub.add_argument("--seed", type=int, default=None, help="override the root seed")
        sub.add_argument("--threads", type=int, default=None, help="worker cap; results do not depend on it")
        return sub

    solve = command("solve", "Picard solve, field, convergence history and propagation report")
    solve.add_argument("--require-monotone", action="store_true", help="refuse non-monotone scenarios before solving")
    verify = command("verify-estimates", "stability harnesses against the regime's predicted exponents")
    verify.add_argument("--solve-first", action="store_true", help="solve when no stored field matches the config")
    command("regularize", "Yosida convergence sweep and Lipschitz/growth certification")
    command("oracle-compare", "solver against the Riccati oracle over a (dt, N, M) grid")
    command("probe-monotonicity", "monotonicity, weak-strong and growth probes of the coefficients")
    return parser


def _scenario(args: argparse.Namespace) -> ScenarioConfig:
    config = workflows.load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {args.seed}")
        config = workflows.with_overrides(config, seed=args.seed)
    return config


def cmd_solve(args: argparse.Namespace, threads: int) -> int:
    field = workflows.run_solve(_scenario(args), args.out, threads, args.require_monotone)
    logger.info("solve finished: %d iterations, converged=%s", field.iteration_count, field.converged)
    return 0


def cmd_verify_estimates(args: argparse.Namespace, threads: int) -> int:
    reports = workflows.run_verify_estimates(_scenario(args), args.out, threads, args.solve_first)
    for report in reports:
        logger.info(
            "%s harness: fitted %.3f vs predicted %.3f (%s)",
            report.harness, report.fitted_exponent, report.predicted_exponent, "passed" if report.passed else "failed",
        )
    return 0 if all(r.passed for r in reports) else 1


def cmd_regularize(args: argparse.Namespace, threads: int) -> int:
    workflows.run_regularize(_scenario(args), args.out)
    return 0


def cmd_oracle_compare(args: argparse.Namespace, threads: int) -> int:
    workflows.run_oracle_compare(_scenario(args), args.out, threads)
    return 0


def cmd_probe_monotonicity(args: argparse.Namespace, threads: int) -> int:
    report = workflows.run_probe_monotonicity(_scenario(args), args.out, threads)
    return 0 if report.passed else 1


COMMANDS = {
    "solve": cmd_solve,
    "verify-estimates": cmd_verify_estimates,
    "regularize": cmd_regularize,
    "oracle-compare": cmd_oracle_compare,
    "probe-monotonicity": cmd_probe_monotonicity,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    threads = args.threads if args.threads is not None else settings.THREADS
    try:
        if threads < 1:
            raise ConfigError(f"--threads must be at least 1, got {threads}")
        return COMMANDS[args.command](args, threads)
    except MfgLabError as exc:
        logger.error("%s", exc)
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return exc.exit_code
