"""
Command-line entry point: `simulate`, `sweep` and `topology-info`.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""
import argparse
import json
import sys
from typing import Any, Dict, List, Optional

from loguru import logger
from pydantic import ValidationError

from src.config.logging import configure_logging
from src.config.settings import Settings, get_settings
from src.core.exceptions import (
    ConfigError,
    InfeasibleSpec,
    NetworkTooSmall,
    NonTermination,
    PrivBcastError,
)
from src.models.schemas import ExperimentConfig
from src.monitoring.prometheus import MetricsCollector
from src.services.experiment_service import SWEEPABLE, cmd_simulate, cmd_sweep
from src.services.topology import auto_d_max, generate_topology
from src.utils.file_utils import read_json

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

HELP = {
    "n": "number of nodes",
    "topology": "regular:<d>, er:<p>, tree:<d>:<depth> or line",
    "k": "minimum DC-net group size",
    "overlap": "groups per node",
    "d_max": "adaptive diffusion rounds or 'auto'",
    "round_interval": "ticks between DC-net rounds of a group",
    "adversary_fraction": "share of honest-but-curious nodes",
    "estimator": "first_timestamp, dc_group or uniform",
    "mode": "full, flood_only, diffusion_only or dc_only",
    "seed": "master seed",
    "output": "CSV path; summary, config echo and traces are written next to it",
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with ExperimentConfig fields")
    for name, field in ExperimentConfig.model_fields.items():
        flag = "--" + name.replace("_", "-")
        if field.annotation is bool:
            parser.add_argument(
                flag, dest=name, action=argparse.BooleanOptionalAction, default=None
            )
        else:
            parser.add_argument(flag, dest=name, default=None, help=HELP.get(name))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privbcast",
        description="Simulate DC-net, adaptive diffusion and flood-and-prune broadcast",
    )
    parser.add_argument("--log-level", default=None, help="overrides PRIVBCAST_LOG_LEVEL")
    parser.add_argument("--workers", type=int, default=None, help="parallel trial processes")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_config_flags(sub.add_parser("simulate", help="run independent trials"))

    sweep = sub.add_parser("sweep", help="repeat `simulate` over one parameter")
    _add_config_flags(sweep)
    sweep.add_argument("--axis", required=True, help=f"one of {', '.join(SWEEPABLE)}")
    sweep.add_argument(
        "--values", required=True, help="comma separated values, e.g. 4,6,8,10"
    )

    _add_config_flags(sub.add_parser("topology-info", help="print n, |E| and diameter"))
    return parser


def parse_config(args: argparse.Namespace, env: Optional[Settings] = None) -> ExperimentConfig:
    """Defaults < JSON file < PRIVBCAST_SEED < command-line flags"""
    env = env or get_settings()
    data: Dict[str, Any] = {}
    if args.config:
        try:
            loaded = read_json(args.config)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError("config", f"cannot read {args.config}: {e}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config", "file must hold a JSON object")
        data.update(loaded)
    if env.SEED is not None:
        data["seed"] = env.SEED
    for name in ExperimentConfig.model_fields:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value

    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        error = e.errors()[0]
        field = ".".join(str(part) for part in error["loc"]) or "config"
        raise ConfigError(field, error["msg"]) from None
    logger.info(f"Resolved config: {config.model_dump_json()}")
    return config


def topology_info(config: ExperimentConfig) -> Dict[str, Any]:
    topology = generate_topology(config.topology, config.seed)
    info = {
        "topology": config.topology.label(),
        "n": topology.n,
        "edges": topology.edge_count,
        "diameter": topology.diameter,
        "auto_d_max": auto_d_max(topology),
    }
    print(json.dumps(info))
    return info


def _split_values(text: str) -> List[str]:
    return [v for v in (part.strip() for part in text.split(",")) if v]


def run_command(args: argparse.Namespace, env: Settings) -> None:
    config = parse_config(args, env)
    if args.command == "simulate":
        cmd_simulate(config, args.workers)
    elif args.command == "sweep":
        cmd_sweep(config, args.axis, _split_values(args.values), args.workers)
    else:
        topology_info(config)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    env = get_settings()
    configure_logging(args.log_level or env.LOG_LEVEL, env.LOG_PATH)

    try:
        run_command(args, env)
    except (ConfigError, NetworkTooSmall, InfeasibleSpec) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except NonTermination as e:
        logger.error(f"Run aborted: {e}")
        return EXIT_RUNTIME
    except PrivBcastError as e:
        logger.error(f"Run failed: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return EXIT_RUNTIME
    finally:
        if env.METRICS_ENABLED:
            MetricsCollector.export(env.METRICS_PATH)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
