"""Shared fixtures for simulator tests."""

import math
import sys
from pathlib import Path
from typing import Callable

import pytest

# Make simulator modules importable
sys.path.append(str(Path(__file__).parents[1] / "simulator"))
from fem_mesh import SystemMatrices, assemble_system, build_mesh  # noqa: E402
from model import ModelParams  # noqa: E402


@pytest.fixture
def project_root() -> Path:
    """Returns the project root directory."""
    return Path(__file__).parent.parent


@pytest.fixture
def configs_dir(project_root: Path) -> Path:
    """Returns the directory of ready-made experiment files."""
    return project_root / "configs"


@pytest.fixture(scope="session")
def system3() -> SystemMatrices:
    """Returns the operators of the 3 x 3 cell mesh."""
    return assemble_system(build_mesh(3))


@pytest.fixture(scope="session")
def system4() -> SystemMatrices:
    """Returns the operators of the 4 x 4 cell mesh."""
    return assemble_system(build_mesh(4))


@pytest.fixture(scope="session")
def system8() -> SystemMatrices:
    """Returns the operators of the 8 x 8 cell mesh."""
    return assemble_system(build_mesh(8))


@pytest.fixture
def ch_params() -> ModelParams:
    """Returns the Cahn-Hilliard preset parameters."""
    return ModelParams(eps=1.0 / (16.0 * math.pi), alpha=100.0, tau=1.0e-6)


@pytest.fixture
def chsh_params() -> ModelParams:
    """Returns full-model parameters with curvature coupling switched on."""
    return ModelParams.with_default_cf(
        eps=1.0 / (16.0 * math.pi), lam=1.0e-5, omega=100.0, sigma=0.05, alpha=100.0, gamma=500.0, tau=1.0e-6
    )


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[[str], Path]:
    """Returns a factory writing experiment-file text to a temporary file."""

    def _write(text: str, name: str = "experiment.cfg") -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
