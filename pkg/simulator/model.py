"""Model parameters, the polynomial potential F1 with its convex-concave splitting, and the discrete energy.

F1(phi, psi) = -(alpha/2) phi^2 - (g/3) s^3 - (gamma/2) s^2 + (delta/2) phi^2 s,  with s = psi - 1/2,
F1+ = (C_F/2)(phi^2 + psi^2) is convex and F1- = F1 - F1+ is concave on the admissible triangle
whenever C_F >= cf_default(alpha, g, gamma, delta).

All potential functions accept scalars or numpy arrays and broadcast.
"""

import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy.optimize import minimize

from errors import DimensionError, InvalidParams

logger = logging.getLogger(__name__)

# Grid resolution for the search of min_K F1
MIN_SEARCH_STEP = 1.0e-3


def cf_default(alpha: float, g: float, gamma: float, delta: float) -> float:
    """Smallest splitting constant that keeps F1- concave on K."""
    return max(0.0, 1.5 * abs(delta) - alpha, abs(delta) + abs(g) - gamma)


# ------------- Parameters -------------
@dataclass(frozen=True)
class ModelParams:
    """Physical and scheme constants (lam is the Swift-Hohenberg bending weight lambda)."""

    eps: float
    lam: float = 0.0
    omega: float = 0.0
    sigma: float = 0.0
    alpha: float = 0.0
    g: float = 0.0
    gamma: float = 0.0
    delta: float = 0.0
    c_f: float = 0.0
    tau: float = 1.0e-6

    def __post_init__(self):
        for name in ("eps", "lam", "omega", "sigma", "alpha", "g", "gamma", "delta", "c_f", "tau"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidParams(f"{name} must be finite, got {value}")
        if self.eps <= 0.0:
            raise InvalidParams(f"eps must be > 0, got {self.eps}")
        if self.tau <= 0.0:
            raise InvalidParams(f"tau must be > 0, got {self.tau}")
        if self.lam < 0.0:
            raise InvalidParams(f"lambda must be >= 0, got {self.lam}")
        if self.alpha < 0.0:
            raise InvalidParams(f"alpha must be >= 0, got {self.alpha}")
        if self.gamma < 0.0:
            raise InvalidParams(f"gamma must be >= 0, got {self.gamma}")
        if self.sigma != 0.0 and self.lam <= 0.0:
            raise InvalidParams("sigma != 0 requires lambda > 0")
        floor = cf_default(self.alpha, self.g, self.gamma, self.delta)
        if self.c_f < floor:
            raise InvalidParams(f"c_f={self.c_f} is below the concavity threshold {floor}")

    @classmethod
    def with_default_cf(cls, **kwargs) -> "ModelParams":
        """Creates parameters with c_f set by cf_default unless given explicitly."""
        if kwargs.get("c_f") is None:
            kwargs["c_f"] = cf_default(
                kwargs.get("alpha", 0.0), kwargs.get("g", 0.0), kwargs.get("gamma", 0.0), kwargs.get("delta", 0.0)
            )
        return cls(**kwargs)

    def evolve(self, **changes) -> "ModelParams":
        """Returns a copy with the given fields replaced."""
        return replace(self, **changes)


# ------------- Potential -------------
def f1(phi, psi, params: ModelParams):
    s = psi - 0.5
    return (
        -0.5 * params.alpha * phi * phi
        - params.g / 3.0 * s * s * s
        - 0.5 * params.gamma * s * s
        + 0.5 * params.delta * phi * phi * s
    )


def f1_grad(phi, psi, params: ModelParams) -> Tuple:
    s = psi - 0.5
    d_phi = -params.alpha * phi + params.delta * phi * s
    d_psi = -params.g * s * s - params.gamma * s + 0.5 * params.delta * phi * phi
    return d_phi, d_psi


def f1_grad_plus(phi, psi, params: ModelParams) -> Tuple:
    return params.c_f * phi, params.c_f * psi


def f1_grad_minus(phi, psi, params: ModelParams) -> Tuple:
    d_phi, d_psi = f1_grad(phi, psi, params)
    plus_phi, plus_psi = f1_grad_plus(phi, psi, params)
    return d_phi - plus_phi, d_psi - plus_psi


# ------------- Energy -------------
@dataclass(frozen=True)
class EnergyReport:
    """Discrete energy E^n split into its four contributions."""

    e_total: float
    e_grad: float
    e_f1: float
    e_cross: float
    e_sh: float
    e_min_bound: float


@lru_cache(maxsize=64)
def _min_f1_on_k(alpha: float, g: float, gamma: float, delta: float) -> float:
    params = ModelParams(eps=1.0, alpha=alpha, g=g, gamma=gamma, delta=delta, c_f=cf_default(alpha, g, gamma, delta))
    phi_axis = np.linspace(-1.0, 1.0, int(round(2.0 / MIN_SEARCH_STEP)) + 1)
    psi_axis = np.linspace(0.0, 1.0, int(round(1.0 / MIN_SEARCH_STEP)) + 1)
    phi, psi = np.meshgrid(phi_axis, psi_axis)
    values = np.where(psi <= 1.0 - np.abs(phi) + 1e-12, f1(phi, psi, params), np.inf)
    best = np.unravel_index(np.argmin(values), values.shape)
    x0 = np.array([phi[best], psi[best]])
    grid_min = float(values[best])

    # Local polish inside the triangle
    constraints = [
        {"type": "ineq", "fun": lambda x: 1.0 - x[0] - x[1]},
        {"type": "ineq", "fun": lambda x: 1.0 + x[0] - x[1]},
        {"type": "ineq", "fun": lambda x: x[1]},
    ]
    result = minimize(
        lambda x: float(f1(x[0], x[1], params)),
        x0,
        jac=lambda x: np.array(f1_grad(x[0], x[1], params), dtype=np.float64),
        method="SLSQP",
        constraints=constraints,
    )
    polished = result.x
    inside = (
        polished[1] >= -1e-12 and polished[0] + polished[1] <= 1.0 + 1e-12 and polished[1] - polished[0] <= 1.0 + 1e-12
    )
    if result.success and inside and result.fun < grid_min:
        logger.debug(f"min_K F1 polished from {grid_min:.12g} to {result.fun:.12g}")
        return float(result.fun)
    return grid_min


def min_f1_on_k(params: ModelParams) -> float:
    """Minimum of F1 over the admissible triangle (grid search plus local polish)."""
    return _min_f1_on_k(params.alpha, params.g, params.gamma, params.delta)


def energy_lower_bound(params: ModelParams, area: float = 1.0) -> float:
    """Returns E_min = |Omega| (min_K F1 - 2 sigma^2 / lambda - lambda omega^4 / 4)."""
    if params.sigma != 0.0 and params.lam <= 0.0:
        raise InvalidParams("energy bound needs lambda > 0 when sigma != 0")
    cross = 2.0 * params.sigma**2 / params.lam if params.sigma != 0.0 else 0.0
    return area * (min_f1_on_k(params) - cross - 0.25 * params.lam * params.omega**4)


def discrete_energy(state, mass: np.ndarray, stiffness, params: ModelParams) -> EnergyReport:
    """Evaluates E^n for a state carrying nodal vectors phi, psi and q."""
    n = len(mass)
    for name in ("phi", "psi", "q"):
        if len(getattr(state, name)) != n:
            raise DimensionError(f"{name} has length {len(getattr(state, name))}, expected {n}")
    phi, psi, q = state.phi, state.psi, state.q
    grad_sq = float(phi @ (stiffness @ phi))
    e_grad = 0.5 * params.eps * grad_sq
    e_f1 = float(mass @ f1(phi, psi, params))
    e_cross = -params.sigma * float(mass @ (phi * q))
    sh = params.omega**2 * (psi - 0.5) - q
    e_sh = 0.5 * params.lam * float(mass @ (sh * sh))
    q_norm_sq = float(mass @ (q * q))
    bound = energy_lower_bound(params, area=float(mass.sum())) + params.lam / 8.0 * q_norm_sq + e_grad
    return EnergyReport(
        e_total=e_grad + e_f1 + e_cross + e_sh,
        e_grad=e_grad,
        e_f1=e_f1,
        e_cross=e_cross,
        e_sh=e_sh,
        e_min_bound=bound,
    )
