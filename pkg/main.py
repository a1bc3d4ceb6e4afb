from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import pydantic
from dotenv import load_dotenv

load_dotenv()

# --- SERVICES ---
from services import __version__
from services.config import ExperimentConfig, Settings, config_hash, load_config
from services.errors import (
    CapabilityError,
    ConfigError,
    DomainError,
    IntegrationError,
    ValidationError,
)
from services.noise_robustness import noise_robustness
from services.quantum_core import quantum_core
from services.reports import reports

LOG = logging.getLogger("holonomy")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

EXPERIMENTS = ("synthesize", "evolve", "sweep", "decoherence", "circuit")
PRESETS = ("fig2", "fig3", "fig4", "fig5", "table-accel")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment document")
    common.add_argument("--out", type=Path, help="output directory (default: $HOLONOMY_OUT_DIR or ./results)")
    common.add_argument("--threads", type=int, help="sweep worker threads (default: $HOLONOMY_THREADS or 1)")
    common.add_argument("--step-override", type=float, help="fixed integration step for every propagation")

    parser = argparse.ArgumentParser(prog="holonomy", description="Time-optimal holonomic gate simulations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sub.add_parser(name, parents=[common], help=f"run a {name} experiment")
    preset = sub.add_parser("preset", parents=[common], help="regenerate a figure dataset")
    preset.add_argument("name", choices=PRESETS)
    validate = sub.add_parser("validate", help="check a config document without running it")
    validate.add_argument("path", type=Path)
    return parser


def _experiment_config(command: str, path: Optional[Path]) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig(experiment=command)
    cfg = load_config(path)
    if cfg.experiment != command:
        raise ConfigError(f"{path}: config describes a '{cfg.experiment}' experiment, not '{command}'")
    return cfg


def run(args: argparse.Namespace, settings: Settings) -> int:
    if args.command == "validate":
        cfg = load_config(args.path)
        print(f"{args.path}: ok ({cfg.experiment}, {config_hash(cfg)})")
        return EXIT_OK

    threads = args.threads if args.threads is not None else settings.threads
    if threads < 1:
        raise ConfigError(f"--threads must be at least 1, got {threads}")
    noise_robustness.threads = threads
    if args.step_override is not None and args.step_override <= 0:
        raise ConfigError(f"--step-override must be positive, got {args.step_override}")
    quantum_core.step_override = args.step_override

    if args.command == "preset":
        out = args.out or Path(settings.out_dir) / args.name
        files = reports.run_preset(args.name, out)
    else:
        cfg = _experiment_config(args.command, args.config)
        out = args.out or Path(cfg.output or settings.out_dir)
        files = reports.run_config(cfg, out)
    LOG.info("%d file(s) written to %s", len(files), out)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = Settings.from_env()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=getattr(logging, settings.log_level, logging.INFO),
                        format="%(asctime)s [%(levelname)s] %(message)s")
    try:
        return run(args, settings)
    except (ConfigError, ValidationError, DomainError, pydantic.ValidationError) as exc:
        LOG.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, CapabilityError) as exc:
        LOG.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
