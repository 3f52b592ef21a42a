"""Time loop of an experiment: assemble, initialize, step, record."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from diagnostics import TimeSeriesRow, make_row, stability_certificate
from errors import NoConvergence, TimeStepTooLarge
from experiment import ExperimentConfig, generate_initial_data
from fem_mesh import SystemMatrices, assemble_system, build_mesh
from snapshot_io import SnapshotWriter, write_timeseries
from vi_solver import State, StepStats, solve_timestep

logger = logging.getLogger(__name__)


@dataclass
class RunResult:
    """Outcome of a run: per-step statistics and rows, the final state and written files."""

    final_state: State
    stats: List[StepStats] = field(default_factory=list)
    rows: List[TimeSeriesRow] = field(default_factory=list)
    snapshots: List[Path] = field(default_factory=list)
    timeseries: Optional[Path] = None
    stopped_early: bool = False


def initial_state(config: ExperimentConfig, matrices: SystemMatrices) -> State:
    """Builds the level-0 state from the seeded initial data."""
    phi0, psi0 = generate_initial_data(config, matrices.mesh, matrices.mass)
    return State.initial(phi0, psi0, matrices).freeze()


def run(config: ExperimentConfig, write_output: bool = True) -> RunResult:
    """Runs an experiment; deterministic for a fixed config and seed."""
    mesh = build_mesh(config.mesh_n)
    matrices = assemble_system(mesh)
    params = config.params
    state = initial_state(config, matrices)
    result = RunResult(final_state=state)
    snapshot_steps = set(config.snapshot_steps)
    formats = config.formats if write_output else ()
    logger.info(
        f"running preset={config.preset} mesh_n={config.mesh_n} tau={params.tau:g} "
        f"n_steps={config.n_steps} seed={config.seed}"
    )

    with SnapshotWriter(mesh, formats, config.out_dir) as writer:
        if 0 in snapshot_steps:
            writer.submit(state)
        for _ in range(config.n_steps):
            try:
                state, stats = solve_timestep(state, matrices, params, config.settings)
            except (NoConvergence, TimeStepTooLarge) as e:
                logger.error(f"step {state.step + 1} failed at t={state.time:.6g}: {e}")
                raise
            result.stats.append(stats)
            result.rows.append(make_row(state, stats, matrices, params))
            if state.step in snapshot_steps:
                writer.submit(state)
            if state.step % config.log_every == 0:
                logger.info(
                    f"step {state.step}/{config.n_steps}: E={stats.energy_after:.10g} sweeps={stats.sweeps}"
                )
            change = abs(stats.energy_after - stats.energy_before)
            if config.steady_tol > 0.0 and change < config.steady_tol * abs(stats.energy_before):
                logger.info(f"quasi-steady state at step {state.step} (relative energy change {change:.3e})")
                result.stopped_early = True
                break
        # The last level is always kept, whether the run stopped early or went the full length
        if state.step not in snapshot_steps:
            writer.submit(state)
        result.snapshots = writer.close()

    result.final_state = state
    if write_output:
        result.timeseries = write_timeseries(result.rows, config.out_dir)
    certificate = stability_certificate(result.stats)
    logger.info(
        f"finished {len(result.stats)} steps; energy inequality "
        f"{'holds' if certificate.passed else 'violated'} (worst margin {certificate.worst_margin:.3e})"
    )
    return result
