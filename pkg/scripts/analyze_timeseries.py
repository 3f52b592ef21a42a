#!/usr/bin/env python3
"""Report over a simulator timeseries.csv: energy decay, mass drift, admissibility and sweep counts."""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List

import numpy as np

REQUIRED_COLUMNS = ("step", "time", "e_total", "dissipation", "mass_phi", "violation", "gs_sweeps")


@dataclass(frozen=True)
class TimeseriesSummary:
    """Aggregates of one timeseries file."""

    steps: int
    t_final: float
    e_first: float
    e_last: float
    energy_increases: int
    max_energy_increase: float
    max_mass_drift: float
    min_violation: float
    sweeps_mean: float
    sweeps_max: int


def parse_args() -> argparse.Namespace:
    """Parses command-line arguments."""
    p = argparse.ArgumentParser(description="Summarize a simulator timeseries.csv.")
    p.add_argument("timeseries", type=Path, help="Path to timeseries.csv")
    p.add_argument(
        "--energy-rtol",
        type=float,
        default=1e-8,
        help="Relative slack when counting energy increases. Default: 1e-8.",
    )
    return p.parse_args()


def load_columns(path: Path) -> Dict[str, np.ndarray]:
    """Reads the numeric columns of a timeseries file."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        missing = [c for c in REQUIRED_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise ValueError(f"missing columns: {', '.join(missing)}")
        rows: List[Dict[str, str]] = list(reader)
    if not rows:
        raise ValueError("timeseries has no rows")
    return {name: np.array([float(r[name]) for r in rows]) for name in rows[0]}


def summarize(columns: Dict[str, np.ndarray], energy_rtol: float = 1e-8) -> TimeseriesSummary:
    """Computes the report aggregates; the first row is the reference for mass drift."""
    energy = columns["e_total"]
    increase = np.diff(energy)
    slack = energy_rtol * (1.0 + np.abs(energy[:-1]))
    sweeps = columns["gs_sweeps"]
    return TimeseriesSummary(
        steps=len(energy),
        t_final=float(columns["time"][-1]),
        e_first=float(energy[0]),
        e_last=float(energy[-1]),
        energy_increases=int(np.count_nonzero(increase > slack)),
        max_energy_increase=float(increase.max()) if increase.size else 0.0,
        max_mass_drift=float(np.max(np.abs(columns["mass_phi"] - columns["mass_phi"][0]))),
        min_violation=float(columns["violation"].min()),
        sweeps_mean=float(sweeps.mean()),
        sweeps_max=int(sweeps.max()),
    )


def print_report(path: Path, s: TimeseriesSummary) -> None:
    print("Timeseries Report")
    print("=" * 80)
    print(f"File: {path}")
    print(f"Steps: {s.steps} (t_final = {s.t_final:.6g})")
    print(f"Energy: {s.e_first:.10g} -> {s.e_last:.10g} (drop {s.e_first - s.e_last:.6g})")
    status = "monotone" if s.energy_increases == 0 else f"{s.energy_increases} increases"
    print(f"  Energy trace: {status} (largest step change {s.max_energy_increase:.3e})")
    print(f"  Max mass drift: {s.max_mass_drift:.3e}")
    print(f"  Min constraint slack: {s.min_violation:.3e}")
    print(f"  GS sweeps per step: mean {s.sweeps_mean:.1f}, max {s.sweeps_max}")


def main() -> int:
    args = parse_args()
    if not args.timeseries.is_file():
        print(f"[Input] file not found: {args.timeseries}", file=sys.stderr)
        return 2
    try:
        columns = load_columns(args.timeseries)
    except ValueError as e:
        print(f"[Parse] {e}", file=sys.stderr)
        return 3
    summary = summarize(columns, args.energy_rtol)
    print_report(args.timeseries, summary)
    return 0 if summary.energy_increases == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
