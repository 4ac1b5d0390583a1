import argparse
import json
import logging
import sys

from fiberlim.fib_cli import (SOLVER_KINDS, cmd_cell_verify, cmd_coefficients, cmd_compare, cmd_regimes,
                              cmd_solve)
from fiberlim.fib_errors import ClassificationError, FiberLimError, SolverConvergenceError
from fiberlim.fib_utils import load_scenario

logger = logging.getLogger(__name__)

COMMANDS = ("coefficients", "cell-verify", "solve", "compare", "regimes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fiberlim", description="Homogenized laws of fiber-reinforced bodies")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="scenario file (TOML, or JSON)")
    parser.add_argument("--out", default=None, help="output directory (overrides the scenario)")
    parser.add_argument("--threads", type=int, default=None, help="assembly and quadrature workers")
    parser.add_argument("--seed", type=int, default=None, help="seed of the random equilibrium samples")
    parser.add_argument("--which", choices=SOLVER_KINDS, default="limit", help="solver used by 'solve'")
    parser.add_argument("--allow-conjectural", action="store_true", help="allow the gamma = 0 limit solve")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    return parser


def run(args) -> int:
    scenario = load_scenario(args.config, {"out": args.out, "threads": args.threads, "seed": args.seed})
    out_dir = scenario.out
    threads = scenario.threads
    if args.command == "coefficients":
        result = cmd_coefficients(scenario, out_dir)
        print(f"{scenario.name}: regime {result['regime']}, coefficients {json.dumps(result['coefficients'])}")
    elif args.command == "cell-verify":
        summary = cmd_cell_verify(scenario, out_dir, threads)
        print(f"cell-verify: {summary['meta']['passing']}/{summary['meta']['total_checks']} checks passing")
    elif args.command == "solve":
        report = cmd_solve(scenario, args.which, out_dir, threads, args.allow_conjectural)
        energy = report.get("energy_total", report.get("F_eps"))
        print(f"solve {args.which}: energy {energy!r}, {report['iterations']} CG iterations")
    elif args.command == "compare":
        summary = cmd_compare(scenario, out_dir, threads)
        print(f"compare: {summary['meta']['passing']}/{summary['meta']['total_checks']} checks passing")
    else:
        result = cmd_regimes(scenario, out_dir)
        for family in result["families"]:
            print(f"{family['name']}: {family['tag']}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(args)
    except FiberLimError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        print(f"error: {str(e)}", file=sys.stderr)
        if isinstance(e, ClassificationError):
            print(json.dumps(e.diagnostics, sort_keys=True, default=str), file=sys.stderr)
        if isinstance(e, SolverConvergenceError) and e.residual_history:
            print(f"last residuals: {e.residual_history[-5:]}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
