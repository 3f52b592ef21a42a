#!/usr/bin/env python3
"""Command-line entry point.

Subcommands:
  simulate  run an experiment file and write snapshots plus timeseries.csv
  check     validate an experiment file and report the nodal SPD margin
  spectrum  dominant wavenumber of a written snapshot

Exit codes: 0 success, 1 configuration error, 2 solver failure, 3 output error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from dotenv import load_dotenv

from diagnostics import dominant_wavenumber
from errors import ConfigError, InvalidParams, SimulationError
from experiment import ExperimentConfig, parse_config
from fem_mesh import assemble_system, build_mesh
from model import cf_default, energy_lower_bound
from simulation import run
from snapshot_io import read_snapshot
from vi_solver import node_coefficients, spd_margin

logger = logging.getLogger(__name__)

LOG_FORMAT = "[%(name)s] %(levelname)s: %(message)s"
MAX_SEED = 2**64 - 1


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parses command-line arguments."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="Only log warnings and errors")
    common.add_argument("-v", "--verbose", action="store_true", help="Log per-step solver details")

    parser = argparse.ArgumentParser(
        description="Constrained Cahn-Hilliard / Swift-Hohenberg phase-field simulator.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python experiment_cli.py simulate --config configs/ch_spinodal.cfg --out-dir out/ch
  python experiment_cli.py check --config configs/chsh_gamma1000.cfg
  python experiment_cli.py spectrum --snapshot out/sh/nodes_00000200.csv --omega 100
""",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="Run an experiment")
    p.add_argument("--config", type=Path, required=True, help="Experiment file")
    p.add_argument("--out-dir", type=Path, default=None, help="Overrides out_dir of the experiment file")
    p.add_argument("--seed", type=int, default=None, help="Overrides the seed (unsigned 64-bit)")

    p = sub.add_parser("check", parents=[common], help="Validate an experiment file without running it")
    p.add_argument("--config", type=Path, required=True, help="Experiment file")

    p = sub.add_parser("spectrum", parents=[common], help="Dominant wavenumber of a snapshot field")
    p.add_argument("--snapshot", type=Path, required=True, help="Nodal CSV or VTK snapshot")
    p.add_argument("--field", default="psi", choices=["phi", "psi", "mu", "q"], help="Field to analyse")
    p.add_argument("--omega", type=float, default=None, help="Preferred wavenumber; prints k/omega")
    return parser.parse_args(argv)


def configure_logging(quiet: bool = False, verbose: bool = False) -> None:
    level = logging.WARNING if quiet else (logging.DEBUG if verbose else logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


# ------------- Commands -------------
def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Parses the experiment file and applies command-line overrides."""
    config = parse_config(args.config)
    changes = {}
    if getattr(args, "out_dir", None) is not None:
        changes["out_dir"] = args.out_dir
    if getattr(args, "seed", None) is not None:
        if not 0 <= args.seed <= MAX_SEED:
            raise InvalidParams(f"seed must be an unsigned 64-bit integer, got {args.seed}")
        changes["seed"] = args.seed
    return config.evolve(**changes) if changes else config


def cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args)
    result = run(config)
    print(f"steps: {len(result.stats)}")
    print(f"final energy: {result.stats[-1].energy_after:.12g}")
    if result.timeseries is not None:
        print(f"timeseries: {result.timeseries}")
    print(f"snapshots: {len(result.snapshots)} files in {config.out_dir}")
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    config = load_config(args)
    params = config.params
    mesh = build_mesh(config.mesh_n)
    matrices = assemble_system(mesh)
    margin, node = spd_margin(matrices, params)

    print(f"config: {args.config}")
    print(f"preset: {config.preset}")
    print(f"mesh: n={config.mesh_n}, nodes={mesh.n_nodes}, h={mesh.h:.6g}")
    print(f"steps: {config.n_steps} (t_end={config.n_steps * params.tau:.6g})")
    for name, value in config.effective_parameters().items():
        print(f"  {name:8s} = {value:.10g}")
    print(f"c_f threshold: {cf_default(params.alpha, params.g, params.gamma, params.delta):.10g}")
    print(f"E_min: {energy_lower_bound(params):.10g}")
    print(f"SPD margin max a12^2/(a11 a22): {margin:.6e} (node {node})")
    if margin >= 1.0:
        # Raises TimeStepTooLarge with the nodal metric
        node_coefficients(node, matrices.mass[node], matrices.splitting.a_diag[node], params)
    print("OK")
    return 0


def cmd_spectrum(args: argparse.Namespace) -> int:
    try:
        snapshot = read_snapshot(args.snapshot)
    except (FileNotFoundError, ValueError) as e:
        raise ConfigError(str(e)) from e
    if args.field not in snapshot.fields:
        raise ConfigError(f"{args.snapshot} has no field '{args.field}'")
    k = dominant_wavenumber(snapshot.fields[args.field], snapshot.mesh)
    print(f"dominant wavenumber: {k:.6f}")
    if args.omega:
        print(f"k/omega: {k / args.omega:.4f}")
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "simulate": cmd_simulate,
    "check": cmd_check,
    "spectrum": cmd_spectrum,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    load_dotenv()
    args = parse_args(argv)
    configure_logging(args.quiet, args.verbose)
    try:
        return COMMANDS[args.command](args)
    except SimulationError as e:
        logger.error(str(e))
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
