"""Per-step and per-run metrics computed from completed states."""

import logging
import math
from dataclasses import astuple, dataclass, fields
from typing import Optional, Sequence

import numpy as np

from errors import DimensionError, NoDominantMode
from fem_mesh import Mesh, SystemMatrices
from model import ModelParams, discrete_energy
from vi_solver import State, StepStats

logger = logging.getLogger(__name__)

# Relative slack of the discrete energy inequality
STABILITY_RTOL = 1.0e-8


def _check_lengths(*vectors: np.ndarray) -> None:
    n = len(vectors[0])
    for vec in vectors[1:]:
        if len(vec) != n:
            raise DimensionError(f"vector lengths differ: {n} != {len(vec)}")


def mass_phi(mass: np.ndarray, phi: np.ndarray) -> float:
    """Returns sum_j M_jj Phi_j."""
    _check_lengths(mass, phi)
    return float(np.dot(mass, phi))


def constraint_violation(phi: np.ndarray, psi: np.ndarray) -> float:
    """Returns the smallest slack of the five inequalities defining K; negative means outside K."""
    _check_lengths(phi, psi)
    phi = np.asarray(phi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    slack = np.minimum.reduce([1.0 - phi, 1.0 + phi, 1.0 - phi - psi, 1.0 + phi - psi, psi])
    return float(slack.min())


# ------------- Time series -------------
@dataclass(frozen=True)
class TimeSeriesRow:
    """One line of timeseries.csv; field order is the column order."""

    step: int
    time: float
    e_total: float
    e_grad: float
    e_f1: float
    e_cross: float
    e_sh: float
    dissipation: float
    mass_phi: float
    phi_min: float
    phi_max: float
    psi_min: float
    psi_max: float
    violation: float
    gs_sweeps: int

    def values(self) -> tuple:
        return astuple(self)


ROW_FIELDS = tuple(f.name for f in fields(TimeSeriesRow))


def make_row(state: State, stats: StepStats, matrices: SystemMatrices, params: ModelParams) -> TimeSeriesRow:
    """Builds the time-series row of a completed step."""
    energy = discrete_energy(state, matrices.mass, matrices.stiffness, params)
    return TimeSeriesRow(
        step=state.step,
        time=state.time,
        e_total=energy.e_total,
        e_grad=energy.e_grad,
        e_f1=energy.e_f1,
        e_cross=energy.e_cross,
        e_sh=energy.e_sh,
        dissipation=stats.dissipation,
        mass_phi=mass_phi(matrices.mass, state.phi),
        phi_min=float(state.phi.min()),
        phi_max=float(state.phi.max()),
        psi_min=float(state.psi.min()),
        psi_max=float(state.psi.max()),
        violation=constraint_violation(state.phi, state.psi),
        gs_sweeps=stats.sweeps,
    )


# ------------- Stability -------------
@dataclass(frozen=True)
class StabilityCertificate:
    """Outcome of checking E^{n+1} + dissipation^{n+1} <= E^n + tol for every transition n -> n+1."""

    passed: bool
    worst_margin: float
    worst_step: int
    first_failure: Optional[int] = None


def stability_certificate(stats: Sequence[StepStats], rtol: float = STABILITY_RTOL) -> StabilityCertificate:
    """Checks the discrete energy inequality over a run; the margin is E^n - E^{n+1} - dissipation."""
    if not stats:
        raise ValueError("stability certificate needs at least one completed step")
    worst_margin = math.inf
    worst_step = -1
    first_failure = None
    for s in stats:
        n = s.step - 1
        margin = s.energy_before - s.energy_after - s.dissipation
        if margin < worst_margin:
            worst_margin = margin
            worst_step = n
        if margin < -rtol * (1.0 + abs(s.energy_before)) and first_failure is None:
            first_failure = n
    if first_failure is not None:
        logger.warning(f"energy inequality violated at n={first_failure} (worst margin {worst_margin:.3e})")
    return StabilityCertificate(
        passed=first_failure is None, worst_margin=worst_margin, worst_step=worst_step, first_failure=first_failure
    )


# ------------- Spectrum -------------
def dominant_wavenumber(field: np.ndarray, mesh: Mesh) -> float:
    """Returns the radial wavenumber (radians per unit length) carrying the most spectral power.

    The field is taken on the nodal grid without interpolation; power is binned in rings
    one frequency unit wide and the zero mode is excluded.
    """
    values = np.asarray(field, dtype=np.float64)
    if len(values) != mesh.n_nodes:
        raise DimensionError(f"field has length {len(values)}, expected {mesh.n_nodes}")
    if np.ptp(values) == 0.0:
        raise NoDominantMode("field is constant")
    grid = values.reshape(mesh.grid_shape)
    grid = grid - grid.mean()
    power = np.abs(np.fft.fft2(grid)) ** 2

    side = grid.shape[0]
    k = 2.0 * np.pi * np.fft.fftfreq(side, d=mesh.h)
    kx, ky = np.meshgrid(k, k)
    dk = 2.0 * np.pi / (side * mesh.h)
    rings = np.rint(np.hypot(kx, ky) / dk).astype(np.int64)
    radial = np.bincount(rings.ravel(), weights=power.ravel())
    radial[0] = 0.0
    if not np.any(radial > 0.0):
        raise NoDominantMode("field has no non-constant spectral content")
    return float(np.argmax(radial) * dk)
