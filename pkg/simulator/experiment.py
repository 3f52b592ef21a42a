"""Experiment files, parameter presets and seeded initial data.

An experiment file holds `key = value` lines; `#` starts a comment. The preset is applied
first and explicit keys override it. Values are coerced per key and then validated
against schemas/experiment.json.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from jsonschema import Draft7Validator

from errors import MissingFile, ParseError, UnknownKey
from fem_mesh import Mesh, assemble_lumped_mass
from model import ModelParams, cf_default
from vi_solver import IterationSettings

logger = logging.getLogger(__name__)

SCHEMA_PATH = Path(__file__).parent / "schemas" / "experiment.json"

# ------------- Presets -------------
BASE_PARAMS: Dict[str, float] = {
    "eps": 1.0 / (16.0 * math.pi),
    "lambda": 1.0e-5,
    "omega": 0.0,
    "sigma": 0.0,
    "alpha": 0.0,
    "g": 0.0,
    "gamma": 0.0,
    "delta": 0.0,
}

PRESETS: Dict[str, Dict[str, float]] = {
    "CH": {"lambda": 0.0, "g": 0.0, "gamma": 0.0, "delta": 0.0, "sigma": 0.0, "alpha": 100.0, "omega": 0.0},
    "SH": {"alpha": 0.0, "delta": 0.0, "sigma": 0.0, "omega": 100.0, "g": 0.0, "gamma": 1000.0},
    "CHSH": {"alpha": 100.0, "omega": 100.0, "delta": 0.0, "sigma": 0.0, "g": 0.0, "gamma": 1000.0},
    "custom": {},
}

PARAM_KEYS = ("eps", "lambda", "omega", "sigma", "alpha", "g", "gamma", "delta", "c_f")

FLOAT_KEYS = {"tau", "t_end", "tol_gs", "tol_residual", "tol_mass", "relaxation", "steady_tol", *PARAM_KEYS}
INT_KEYS = {"mesh_n", "n_steps", "seed", "max_sweeps", "log_every"}
SETTING_KEYS = ("tol_gs", "max_sweeps", "tol_residual", "tol_mass", "relaxation")
LIST_KEYS = {"snapshot_steps", "formats"}
STR_KEYS = {"preset", "out_dir"}
KNOWN_KEYS = FLOAT_KEYS | INT_KEYS | LIST_KEYS | STR_KEYS

DEFAULT_FORMATS = ("vtk", "pgm", "csv")


def preset_params(
    preset: str, overrides: Optional[Dict[str, float]] = None, tau: float = 1.0e-6
) -> ModelParams:
    """Returns the model parameters of a preset with explicit overrides applied.

    Keys follow the experiment-file names ("lambda", not "lam"). c_f defaults to the
    concavity threshold of the effective parameters.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    values: Dict[str, Any] = {**BASE_PARAMS, **PRESETS[preset], **(overrides or {})}
    c_f = values.pop("c_f", None)
    if c_f is None:
        c_f = cf_default(values["alpha"], values["g"], values["gamma"], values["delta"])
    return ModelParams(
        eps=values["eps"],
        lam=values["lambda"],
        omega=values["omega"],
        sigma=values["sigma"],
        alpha=values["alpha"],
        g=values["g"],
        gamma=values["gamma"],
        delta=values["delta"],
        c_f=c_f,
        tau=tau,
    )


# ------------- Config -------------
@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment settings."""

    preset: str = "custom"
    mesh_n: int = 64
    n_steps: int = 100
    snapshot_steps: Tuple[int, ...] = ()
    seed: int = 0
    params: ModelParams = field(default_factory=lambda: preset_params("custom"))
    settings: IterationSettings = field(default_factory=IterationSettings)
    out_dir: Path = Path("output")
    formats: Tuple[str, ...] = DEFAULT_FORMATS
    steady_tol: float = 0.0
    log_every: int = 10

    @property
    def tau(self) -> float:
        return self.params.tau

    def evolve(self, **changes) -> "ExperimentConfig":
        """Returns a copy with the given fields replaced."""
        return replace(self, **changes)

    def effective_parameters(self) -> Dict[str, float]:
        """Returns the model parameters under their experiment-file names."""
        p = self.params
        return {
            "eps": p.eps,
            "lambda": p.lam,
            "omega": p.omega,
            "sigma": p.sigma,
            "alpha": p.alpha,
            "g": p.g,
            "gamma": p.gamma,
            "delta": p.delta,
            "c_f": p.c_f,
            "tau": p.tau,
        }


def load_schema() -> Dict[str, Any]:
    """Loads the JSON schema of the experiment settings."""
    with open(SCHEMA_PATH, "r", encoding="utf-8") as f:
        return json.load(f)


def _coerce(key: str, raw: str, line: int) -> Any:
    try:
        if key in FLOAT_KEYS:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError("not finite")
            return value
        if key in INT_KEYS:
            return int(raw)
        if key == "snapshot_steps":
            return [int(tok) for tok in raw.replace(",", " ").split()]
        if key == "formats":
            return [tok.lower() for tok in raw.replace(",", " ").split()]
    except ValueError as e:
        raise ParseError(line, f"invalid value for {key}: {raw!r} ({e})") from e
    return raw


def read_settings(path) -> Tuple[Dict[str, Any], Dict[str, int]]:
    """Reads an experiment file into typed values and the line number of every key."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    values: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for number, text in enumerate(f, start=1):
            text = text.split("#", 1)[0].strip()
            if not text:
                continue
            key, sep, raw = text.partition("=")
            key = key.strip()
            if not sep or not key:
                raise ParseError(number, f"expected 'key = value', got {text!r}")
            if key not in KNOWN_KEYS:
                raise UnknownKey(key, number)
            if key in values:
                raise ParseError(number, f"duplicate key '{key}' (first set on line {lines[key]})")
            values[key] = _coerce(key, raw.strip(), number)
            lines[key] = number
    return values, lines


def validate_settings(values: Dict[str, Any], lines: Dict[str, int]) -> None:
    """Validates typed values against the schema; the first violation becomes a ParseError."""
    validator = Draft7Validator(load_schema())
    errors = list(validator.iter_errors(values))
    if not errors:
        return

    def line_of(error) -> int:
        key = error.absolute_path[0] if error.absolute_path else None
        return lines.get(key, 0)

    first = min(errors, key=line_of)
    key = first.absolute_path[0] if first.absolute_path else "(root)"
    raise ParseError(line_of(first), f"{key}: {first.message}")


def build_config(
    values: Dict[str, Any], lines: Optional[Dict[str, int]] = None, settings: Optional[IterationSettings] = None
) -> ExperimentConfig:
    """Resolves validated values into an ExperimentConfig; settings default to the environment."""
    lines = lines or {}
    preset = values.get("preset", "custom")
    tau = values.get("tau", 1.0e-6)
    overrides = {key: values[key] for key in PARAM_KEYS if key in values}
    params = preset_params(preset, overrides, tau=tau)

    n_steps = values.get("n_steps", 100)
    if "t_end" in values:
        if "n_steps" in values:
            raise ParseError(lines.get("t_end", 0), "t_end and n_steps are mutually exclusive")
        n_steps = max(1, int(round(values["t_end"] / tau)))

    base = settings if settings is not None else IterationSettings.from_env()
    settings = replace(base, **{key: values[key] for key in SETTING_KEYS if key in values})
    snapshot_steps = tuple(sorted(set(values.get("snapshot_steps", []))))
    beyond = [s for s in snapshot_steps if s > n_steps]
    if beyond:
        logger.warning(f"snapshot steps {beyond} lie beyond n_steps={n_steps} and will not be written")

    return ExperimentConfig(
        preset=preset,
        mesh_n=values.get("mesh_n", 64),
        n_steps=n_steps,
        snapshot_steps=snapshot_steps,
        seed=values.get("seed", 0),
        params=params,
        settings=settings,
        out_dir=Path(values.get("out_dir", "output")),
        formats=tuple(values.get("formats", DEFAULT_FORMATS)),
        steady_tol=values.get("steady_tol", 0.0),
        log_every=values.get("log_every", 10),
    )


def parse_config(path, settings: Optional[IterationSettings] = None) -> ExperimentConfig:
    """Parses and validates an experiment file."""
    values, lines = read_settings(path)
    validate_settings(values, lines)
    config = build_config(values, lines, settings)
    logger.info(f"loaded {path}: preset={config.preset}, mesh_n={config.mesh_n}, n_steps={config.n_steps}")
    return config


# ------------- Initial data -------------
def generate_initial_data(
    config: ExperimentConfig, mesh: Mesh, mass: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Draws the seeded initial fields (Phi^0, Psi^0).

    Phi^0 is uniform noise in [-0.01, 0.01] shifted to zero lumped mass (zero for SH).
    Psi^0 is 0 for CH, uniform in [0.49, 0.51] for SH and (1 - |Phi^0|) / 2 otherwise.
    """
    rng = np.random.default_rng(config.seed)
    n = mesh.n_nodes
    if mass is None:
        mass = assemble_lumped_mass(mesh)
    if config.preset == "SH":
        phi0 = np.zeros(n)
    else:
        phi0 = rng.uniform(-0.01, 0.01, n)
        phi0 -= float(mass @ phi0) / float(mass.sum())

    if config.preset == "CH":
        psi0 = np.zeros(n)
    elif config.preset == "SH":
        psi0 = rng.uniform(0.49, 0.51, n)
    else:
        psi0 = 0.5 * (1.0 - np.abs(phi0))
    return phi0, psi0
