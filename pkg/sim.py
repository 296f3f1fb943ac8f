#!/usr/bin/env python3
"""
AR-MAC Simulator
Runs packet-error-rate sweeps of the AR-MAC adaptive TDMA protocol and the
slotted CSMA/CA baseline for a wireless body area network, and writes the
per-node energy ledgers and the summary statistics as CSV.
"""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

import argparse
import dataclasses
import logging
import sys
from typing import List, Optional, Sequence

# Configure logging
logging.basicConfig(
    level=os.getenv('ARMAC_SIM_LOG_LEVEL', 'INFO').upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(os.getenv('ARMAC_SIM_LOG_FILE', 'sim.log'), delay=True),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger('ARMACSim')

from utils.config import PROTOCOL_CHOICES, ConfigError, load_config
from utils.sweep import run_sweep, write_outputs

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_ABORTED = 2


def parse_seeds(text: str) -> List[int]:
    try:
        seeds = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")
    if not seeds or any(s < 0 for s in seeds):
        raise argparse.ArgumentTypeError(f"seeds must be non-negative integers, got {text!r}")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='sim.py', description='AR-MAC / CSMA energy sweep simulator')
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='run a PER sweep described by a JSON scenario')
    run.add_argument('--config', required=True, help='scenario JSON file')
    run.add_argument('--out', default='results', help='output directory (default: results)')
    run.add_argument('--trace', action='store_true', help='write a protocol trace per cell')
    run.add_argument('--protocol', choices=PROTOCOL_CHOICES, help='override the scenario protocol')
    run.add_argument('--seeds', type=parse_seeds, help='override the scenario seeds, e.g. 1,2,3')
    return parser


def run_command(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        logger.error(f"Invalid scenario {args.config}: {e}")
        return EXIT_CONFIG
    except OSError as e:
        logger.error(f"Cannot read scenario {args.config}: {e}")
        return EXIT_CONFIG

    overrides = {}
    if args.protocol:
        overrides['protocol'] = args.protocol
    if args.seeds:
        overrides['seeds'] = tuple(args.seeds)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)

    reports = run_sweep(cfg, trace=args.trace)
    write_outputs(reports, args.out, trace=args.trace)

    aborted = [r for r in reports if not r.ok]
    if aborted:
        logger.error(f"{len(aborted)} of {len(reports)} cells aborted")
        return EXIT_ABORTED
    logger.info(f"Sweep complete: {len(reports)} cells, results in {args.out}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the simulator."""
    args = build_parser().parse_args(argv)
    if args.command == 'run':
        return run_command(args)
    return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
