"""Exception hierarchy for the simulator.

Every error carries the process exit code the CLI reports for it:
- 1: configuration problems (bad file, unknown key, invalid parameters)
- 2: solver failures (no convergence, time step too large, degenerate operators)
- 3: output failures (snapshot or timeseries could not be written)
"""

from typing import Optional


class SimulationError(Exception):
    """Base class for all simulator errors."""

    exit_code = 2


# ------------- Configuration -------------
class ConfigError(SimulationError):
    """Raised when an experiment cannot be configured."""

    exit_code = 1


class MissingFile(ConfigError):
    """Raised when the experiment file does not exist."""

    def __init__(self, path):
        super().__init__(f"config file not found: {path}")
        self.path = path


class UnknownKey(ConfigError):
    """Raised for a key that is not part of the experiment file format."""

    def __init__(self, name: str, line: Optional[int] = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"unknown config key '{name}'{where}")
        self.name = name
        self.line = line


class ParseError(ConfigError):
    """Raised for a malformed or invalid line in the experiment file."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvalidParams(ConfigError):
    """Raised when model parameters violate their constraints."""


class InvalidMesh(ConfigError):
    """Raised when the mesh cannot be built."""


# ------------- Solver -------------
class SolverError(SimulationError):
    """Raised when the numerical solve fails."""

    exit_code = 2


class DimensionError(SolverError):
    """Raised when nodal vectors do not match the mesh."""


class DegenerateDiagonal(SolverError):
    """Raised when a diagonal operator entry is not strictly positive."""


class NonSPDMetric(SolverError):
    """Raised when a projection metric is not symmetric positive definite."""


class TimeStepTooLarge(SolverError):
    """Raised when the nodal metric loses positive definiteness for the chosen time step."""

    def __init__(self, node: int, a11: float, a12: float, a22: float):
        super().__init__(
            f"nodal metric not SPD at node {node}: a12^2={a12 * a12:.6e} >= a11*a22={a11 * a22:.6e}; reduce tau"
        )
        self.node = node


class NoConvergence(SolverError):
    """Raised when the Gauss-Seidel iteration exhausts its sweep budget."""

    def __init__(self, sweeps: int, max_update: float, residual: float):
        super().__init__(
            f"no convergence after {sweeps} sweeps (last max_update={max_update:.3e}, residual={residual:.3e})"
        )
        self.sweeps = sweeps
        self.max_update = max_update
        self.residual = residual


class NoDominantMode(SolverError):
    """Raised when a field has no non-constant spectral content."""


# ------------- Output -------------
class OutputError(SimulationError):
    """Raised when writing output files fails."""

    exit_code = 3

    def __init__(self, path, cause: Exception):
        super().__init__(f"failed to write {path}: {cause}")
        self.path = path
