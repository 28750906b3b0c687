"""
Command-line entry point of the container auction simulator.

Subcommands:
    run          Batch auction vs FCFS baseline, one row per repetition (and swept value)
    sweep-theta  Welfare and winner fraction per batch interval
    ratio-sweep  Empirical competitive ratio per D/F ratio on oracle-sized instances
    generate     Write a synthetic workload as a bid JSON file

Exit codes: 0 success, 1 unexpected error, 2 invalid configuration or input,
3 oracle limit exceeded.

Example:
    $ python -m app.cli run --theta 4 --density 10 --slots 100 --reps 10 --out run.csv
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from app.commands.experiments import (
    RUN_SWEEP_AXES,
    ExperimentSpec,
    cmd_generate,
    cmd_ratio_sweep,
    cmd_run,
    cmd_sweep_theta,
)
from app.commands.results import write_table
from app.config import Config, ConfigError
from app.logging_setup import setup_logging
from app.model import ModelError, bid_to_dict, dump_bids
from app.oracle import OracleLimitError
from app.workload import WorkloadError

logger = logging.getLogger("app.cli")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INPUT = 2
EXIT_ORACLE_LIMIT = 3

# Oracle-sized instances unless the user or config file says otherwise.
RATIO_SWEEP_DEFAULTS: Dict[str, Any] = {
    "slots": 12,
    "max_bids": 5,
    "density": 2.0,
    "task_slots_max": 3,
    "containers_max": 2,
    "window": 3,
}
SUBCOMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {"ratio-sweep": RATIO_SWEEP_DEFAULTS}
DEFAULT_SWEEPS = {"sweep-theta": "1,2,3,4,5,6,7,8,9,10,11,12", "ratio-sweep": "1,2,4,8"}

# argparse dest -> config key
FLAG_KEYS = {
    "slots": "slots",
    "theta": "theta",
    "density": "density",
    "capacity": "capacity",
    "resources": "resources",
    "sigma": "sigma",
    "df_ratio": "df_ratio",
    "reps": "reps",
    "seed": "seed",
    "out": "out",
    "format": "format",
    "max_containers_exact": "max_containers_exact",
    "events": "events",
    "workers": "workers",
    "trace": "trace",
    "graph_shape": "graph_shape",
    "max_bids": "max_bids",
    "demand_min": "demand_min",
    "log_level": "log_level",
}


def _common_arguments() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group()
    source.add_argument("--trace", metavar="PATH", help="trace CSV (job_id,arrival,duration,cpu,ram,disk)")
    source.add_argument("--generate", action="store_true", help="synthetic workload (default)")
    common.add_argument("--config", metavar="PATH", help="JSON config file (overrides AUCTION_CONFIG_PATH)")
    common.add_argument("--slots", type=int, help="number of slots T")
    common.add_argument("--theta", type=int, help="batch interval in slots")
    common.add_argument("--density", type=float, help="expected bids per arrival window")
    common.add_argument("--capacity", type=float, help="capacity per resource")
    common.add_argument("--resources", type=int, help="number of resource types")
    common.add_argument("--sigma", type=float, help="assumed minimum occupation rate")
    common.add_argument("--df-ratio", type=float, help="upper over lower unit value of generated bids")
    common.add_argument("--reps", type=int, help="repetitions")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--out", metavar="PATH", help="output file (stdout when absent)")
    common.add_argument("--format", choices=["csv", "json"], help="output format")
    common.add_argument("--max-containers-exact", type=int, help="largest DAG for exact scheduling")
    common.add_argument("--events", metavar="PATH", help="write the auction event log as JSON lines")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--graph-shape", choices=["chain", "random-dag"], help="container graph shape")
    common.add_argument("--max-bids", type=int, help="keep only the earliest bids")
    common.add_argument("--demand-min", type=float, help="lower end of generated per-slot demands")
    common.add_argument("--timing", action="store_true", help="add a runtime_ms column")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging level")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_arguments()
    parser = argparse.ArgumentParser(prog="container-auction", description="Batch posted-price container auction simulator")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", parents=[common], help="batch auction vs FCFS baseline")
    run.add_argument("--oracle", action="store_true", help="add the exact-optimum ratio column")
    run.add_argument("--sweep", choices=list(RUN_SWEEP_AXES), help="setting to sweep over --values")
    run.add_argument("--values", help="comma-separated values of the swept setting")

    for name, help_text in (("sweep-theta", "sweep the batch interval"), ("ratio-sweep", "sweep D/F ratios")):
        sweep = commands.add_parser(name, parents=[common], help=help_text)
        sweep.add_argument("--values", default=DEFAULT_SWEEPS[name], help="comma-separated sweep values")

    commands.add_parser("generate", parents=[common], help="write a synthetic bid file")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: getattr(args, dest) for dest, key in FLAG_KEYS.items() if getattr(args, dest, None) is not None}


def _sweep_values(args: argparse.Namespace) -> List[float]:
    raw = getattr(args, "values", None)
    if raw is None:
        return []
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be comma-separated numbers, got '{raw}'")


def _execute(args: argparse.Namespace, config: Config) -> int:
    spec = ExperimentSpec.from_config(
        args.command,
        config,
        sweep_values=_sweep_values(args),
        timing=args.timing,
        oracle=getattr(args, "oracle", False),
        sweep_axis=getattr(args, "sweep", None),
    )
    out, fmt = config.get("out"), config.get("format")

    if args.command == "generate":
        bids = cmd_generate(spec)
        if out:
            dump_bids(bids, out)
        else:
            sys.stdout.write(json.dumps([bid_to_dict(b) for b in bids], indent=2) + "\n")
        logger.info(f"Generated {len(bids)} bids")
        return EXIT_OK

    handlers = {"run": cmd_run, "sweep-theta": cmd_sweep_theta, "ratio-sweep": cmd_ratio_sweep}
    table = handlers[args.command](spec)
    write_table(table, out, fmt)
    if table.errors:
        logger.error(f"{table.errors} row(s) exceeded the exact oracle limits")
        return EXIT_ORACLE_LIMIT
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments, load configuration and run one subcommand.

    Returns:
        Process exit code
    """
    args = build_parser().parse_args(argv)
    try:
        config = Config(
            overrides=_overrides(args),
            config_path=args.config,
            defaults=SUBCOMMAND_DEFAULTS.get(args.command),
        )
    except ConfigError as e:
        # Log to stderr since logging isn't set up yet
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_INPUT

    setup_logging(config.log_level)
    try:
        return _execute(args, config)
    except (ConfigError, WorkloadError, ModelError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_INPUT
    except OracleLimitError as e:
        logger.error(f"Oracle limit: {e}")
        return EXIT_ORACLE_LIMIT
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
