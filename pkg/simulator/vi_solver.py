"""Projected Gauss-Seidel solver for one time step of the obstacle scheme.

Per time level the unknowns are the nodal vectors (Phi, Psi) in K and W, Z, Q. A sweep
visits the nodes in index order; at node j it
1. accumulates the coupling sums (A_L + A_L^T) x over the latest values of W, Phi, Psi, Q,
2. forms the residuals r1..r5 and the 2x2 metric (a11, a12, a22) with right-hand side beta,
3. projects A^{-1} beta onto K in the metric A,
4. recovers W_j, Z_j, Q_j by back-substitution.
Entries i < j have already been overwritten in the current sweep, so in-place updates give
strict Gauss-Seidel ordering.
"""

import logging
import math
import os
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np
from numba import njit

from errors import DegenerateDiagonal, DimensionError, InvalidParams, NoConvergence, TimeStepTooLarge
from fem_mesh import SystemMatrices
from model import ModelParams, discrete_energy, f1_grad_minus
from projection import KPoint, ProjMatrix, _project, _solve2

logger = logging.getLogger(__name__)


# ------------- Types -------------
@dataclass
class State:
    """Nodal unknowns at one time level; W approximates mu and Q approximates -Laplace(psi)."""

    phi: np.ndarray
    psi: np.ndarray
    w: np.ndarray
    z: np.ndarray
    q: np.ndarray
    time: float = 0.0
    step: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.phi)

    @classmethod
    def initial(cls, phi0: np.ndarray, psi0: np.ndarray, matrices: SystemMatrices) -> "State":
        """Creates the level-0 state with Q^0 from the discrete Laplacian and W = Z = 0."""
        phi0 = np.array(phi0, dtype=np.float64)
        psi0 = np.array(psi0, dtype=np.float64)
        for name, vec in (("phi0", phi0), ("psi0", psi0)):
            if len(vec) != matrices.n_nodes:
                raise DimensionError(f"{name} has length {len(vec)}, expected {matrices.n_nodes}")
        q0 = init_q0(matrices.mass, matrices.stiffness, psi0)
        zeros = np.zeros(matrices.n_nodes)
        return cls(phi=phi0, psi=psi0, w=zeros, z=zeros.copy(), q=q0)

    def copy(self) -> "State":
        """Returns a writeable deep copy."""
        return State(
            phi=self.phi.copy(),
            psi=self.psi.copy(),
            w=self.w.copy(),
            z=self.z.copy(),
            q=self.q.copy(),
            time=self.time,
            step=self.step,
        )

    def freeze(self) -> "State":
        """Marks the nodal vectors read-only; completed levels are shared as snapshots."""
        for vec in (self.phi, self.psi, self.w, self.z, self.q):
            vec.flags.writeable = False
        return self


@dataclass(frozen=True)
class IterationSettings:
    """Stopping rule of the Gauss-Seidel iteration."""

    tol_gs: float = 1.0e-8
    max_sweeps: int = 20000
    tol_residual: float = 1.0e-8
    tol_mass: float = 1.0e-14
    relaxation: float = 1.0

    def __post_init__(self):
        if not self.tol_gs > 0.0:
            raise InvalidParams(f"tol_gs must be > 0, got {self.tol_gs}")
        if self.max_sweeps < 1:
            raise InvalidParams(f"max_sweeps must be >= 1, got {self.max_sweeps}")
        if not self.tol_residual > 0.0:
            raise InvalidParams(f"tol_residual must be > 0, got {self.tol_residual}")
        if not self.tol_mass > 0.0:
            raise InvalidParams(f"tol_mass must be > 0, got {self.tol_mass}")
        if not 0.0 < self.relaxation < 2.0:
            raise InvalidParams(f"relaxation must lie in (0, 2), got {self.relaxation}")

    @classmethod
    def from_env(cls) -> "IterationSettings":
        """Creates IterationSettings from environment variables."""
        return cls(
            tol_gs=float(os.getenv("CHSH_TOL_GS", "1e-8")),
            max_sweeps=int(os.getenv("CHSH_MAX_SWEEPS", "20000")),
            tol_residual=float(os.getenv("CHSH_TOL_RESIDUAL", "1e-8")),
            tol_mass=float(os.getenv("CHSH_TOL_MASS", "1e-14")),
            relaxation=float(os.getenv("CHSH_RELAXATION", "1.0")),
        )


@dataclass(frozen=True)
class StepStats:
    """Outcome of one time step."""

    step: int
    sweeps: int
    max_update: float
    residual: float
    mass_defect: float
    energy_before: float
    energy_after: float
    dissipation: float


@dataclass(frozen=True)
class ExplicitTerms:
    """Data of the previous time level entering every sweep: Phi^n, Psi^n, R^n, S^n."""

    phi_n: np.ndarray
    psi_n: np.ndarray
    r_n: np.ndarray
    s_n: np.ndarray


class NodeResiduals(NamedTuple):
    r1: float
    r2: float
    r3: float
    r4: float
    r5: float


# ------------- Kernels -------------
@njit(cache=True)
def _coupled_sums(indptr, indices, data, j, w, phi, psi, q):
    cw = 0.0
    cphi = 0.0
    cpsi = 0.0
    cq = 0.0
    for k in range(indptr[j], indptr[j + 1]):
        i = indices[k]
        a = data[k]
        cw += a * w[i]
        cphi += a * phi[i]
        cpsi += a * psi[i]
        cq += a * q[i]
    return cw, cphi, cpsi, cq


@njit(cache=True)
def _node_coefficients(m_jj, a_jj, eps, lam, omega, sigma, c_f, tau):
    root_lam = math.sqrt(lam)
    root_m = math.sqrt(m_jj)
    sh = root_lam * omega * omega * root_m - root_lam * a_jj / root_m
    a11 = eps * a_jj + c_f * m_jj + m_jj * m_jj / (tau * a_jj)
    a22 = sh * sh + c_f * m_jj + m_jj / tau
    a12 = 0.5 * sigma * a_jj
    return a11, a12, a22


@njit(cache=True)
def _node_residuals(m_jj, phi_n_j, psi_n_j, r_n_j, s_n_j, cw, cphi, cpsi, cq, eps, lam, omega, sigma, tau):
    r1 = m_jj * phi_n_j + tau * cw
    r2 = r_n_j + eps * cphi - 0.5 * sigma * cpsi
    r3 = m_jj * psi_n_j
    r4 = s_n_j - 0.5 * sigma * cphi + lam * cq - 2.0 * lam * omega * omega * cpsi
    r5 = cpsi
    return r1, r2, r3, r4, r5


@njit(cache=True)
def _node_rhs(m_jj, a_jj, r1, r2, r3, r4, r5, lam, tau):
    beta1 = r2 + m_jj * r1 / (tau * a_jj)
    beta2 = r4 + r3 / tau + lam * a_jj * r5 / m_jj
    return beta1, beta2


@njit(cache=True)
def _back_substitute(phi_j, psi_j, r1, r3, r5, m_jj, a_jj, tau):
    w_j = (r1 - m_jj * phi_j) / (tau * a_jj)
    z_j = (r3 - m_jj * psi_j) / (tau * m_jj)
    q_j = -(r5 - a_jj * psi_j) / m_jj
    return w_j, z_j, q_j


@njit(cache=True)
def _gs_sweep_kernel(
    indptr, indices, data, a_diag, mass, phi_n, psi_n, r_n, s_n,
    phi, psi, w, z, q, eps, lam, omega, sigma, c_f, tau, relaxation,
):  # fmt: skip
    max_update = 0.0
    for j in range(phi.shape[0]):
        m_jj = mass[j]
        a_jj = a_diag[j]
        cw, cphi, cpsi, cq = _coupled_sums(indptr, indices, data, j, w, phi, psi, q)
        r1, r2, r3, r4, r5 = _node_residuals(
            m_jj, phi_n[j], psi_n[j], r_n[j], s_n[j], cw, cphi, cpsi, cq, eps, lam, omega, sigma, tau
        )
        a11, a12, a22 = _node_coefficients(m_jj, a_jj, eps, lam, omega, sigma, c_f, tau)
        if not a12 * a12 < a11 * a22:
            return max_update, j
        beta1, beta2 = _node_rhs(m_jj, a_jj, r1, r2, r3, r4, r5, lam, tau)
        x1, x2 = _solve2(a11, a12, a22, beta1, beta2)
        y1, y2 = _project(a11, a12, a22, x1, x2)
        if relaxation != 1.0:
            y1, y2 = _project(a11, a12, a22, phi[j] + relaxation * (y1 - phi[j]), psi[j] + relaxation * (y2 - psi[j]))
        update = max(abs(y1 - phi[j]), abs(y2 - psi[j]))
        if update > max_update:
            max_update = update
        phi[j] = y1
        psi[j] = y2
        w_j, z_j, q_j = _back_substitute(y1, y2, r1, r3, r5, m_jj, a_jj, tau)
        w[j] = w_j
        z[j] = z_j
        q[j] = q_j
    return max_update, -1


# ------------- Nodal operations -------------
def init_q0(mass: np.ndarray, stiffness, psi0: np.ndarray) -> np.ndarray:
    """Solves M Q^0 = A Psi^0 for the diagonal lumped mass."""
    mass = np.asarray(mass, dtype=np.float64)
    if len(psi0) != len(mass):
        raise DimensionError(f"psi0 has length {len(psi0)}, expected {len(mass)}")
    if np.any(mass <= 0.0):
        raise DegenerateDiagonal("lumped mass has a nonpositive entry")
    return (stiffness @ np.asarray(psi0, dtype=np.float64)) / mass


def node_coefficients(j: int, m_jj: float, a_jj: float, params: ModelParams) -> ProjMatrix:
    """Returns the nodal metric; raises TimeStepTooLarge when it is not SPD."""
    if m_jj <= 0.0 or a_jj <= 0.0:
        raise DegenerateDiagonal(f"node {j}: M_jj={m_jj}, A_jj={a_jj} must be positive")
    a11, a12, a22 = _node_coefficients(
        float(m_jj), float(a_jj), params.eps, params.lam, params.omega, params.sigma, params.c_f, params.tau
    )
    if not a12 * a12 < a11 * a22:
        raise TimeStepTooLarge(j, a11, a12, a22)
    return ProjMatrix(a11, a12, a22)


def metric_coefficients(matrices: SystemMatrices, params: ModelParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (a11, a12, a22) of every node as arrays."""
    m = np.asarray(matrices.mass)
    a = np.asarray(matrices.splitting.a_diag)
    sh = np.sqrt(params.lam) * params.omega**2 * np.sqrt(m) - np.sqrt(params.lam) * a / np.sqrt(m)
    a11 = params.eps * a + params.c_f * m + m * m / (params.tau * a)
    a22 = sh * sh + params.c_f * m + m / params.tau
    a12 = 0.5 * params.sigma * a
    return a11, a12, a22


def spd_margin(matrices: SystemMatrices, params: ModelParams) -> Tuple[float, int]:
    """Returns max_j a12^2 / (a11 a22) and the node attaining it; the metric is SPD iff the value is < 1."""
    a11, a12, a22 = metric_coefficients(matrices, params)
    ratio = a12 * a12 / (a11 * a22)
    worst = int(np.argmax(ratio))
    return float(ratio[worst]), worst


def explicit_terms(prev: State, matrices: SystemMatrices, params: ModelParams) -> ExplicitTerms:
    """Computes the explicit parts of the right-hand side.

    R^n = (sigma/2) A Psi^n - M dF1-/dphi,
    S^n = (lambda omega^4/2) M 1 - M dF1-/dpsi + (sigma/2) A Phi^n.
    """
    mass, stiffness = matrices.mass, matrices.stiffness
    d_phi, d_psi = f1_grad_minus(prev.phi, prev.psi, params)
    r_n = 0.5 * params.sigma * (stiffness @ prev.psi) - mass * d_phi
    s_n = 0.5 * params.lam * params.omega**4 * mass - mass * d_psi + 0.5 * params.sigma * (stiffness @ prev.phi)
    return ExplicitTerms(
        phi_n=np.ascontiguousarray(prev.phi, dtype=np.float64),
        psi_n=np.ascontiguousarray(prev.psi, dtype=np.float64),
        r_n=np.ascontiguousarray(r_n),
        s_n=np.ascontiguousarray(s_n),
    )


def node_residuals(
    j: int, state: State, explicit: ExplicitTerms, matrices: SystemMatrices, params: ModelParams
) -> NodeResiduals:
    """Returns [r1]_j .. [r5]_j from the latest values held in state."""
    coupling = matrices.coupling
    cw, cphi, cpsi, cq = _coupled_sums(
        coupling.indptr, coupling.indices, coupling.data, j, state.w, state.phi, state.psi, state.q
    )
    return NodeResiduals(
        *_node_residuals(
            matrices.mass[j],
            explicit.phi_n[j],
            explicit.psi_n[j],
            explicit.r_n[j],
            explicit.s_n[j],
            cw,
            cphi,
            cpsi,
            cq,
            params.eps,
            params.lam,
            params.omega,
            params.sigma,
            params.tau,
        )
    )


def node_rhs(
    j: int, state: State, explicit: ExplicitTerms, matrices: SystemMatrices, params: ModelParams
) -> Tuple[float, float]:
    """Returns (beta1, beta2) of the nodal variational inequality at node j."""
    r = node_residuals(j, state, explicit, matrices, params)
    return _node_rhs(matrices.mass[j], matrices.splitting.a_diag[j], *r, params.lam, params.tau)


def node_solve(metric: ProjMatrix, beta: Tuple[float, float]) -> KPoint:
    """Solves the 2x2 obstacle problem: projection of A^{-1} beta onto K."""
    metric.validate()
    x1, x2 = metric.solve((float(beta[0]), float(beta[1])))
    return KPoint(*_project(metric.a11, metric.a12, metric.a22, x1, x2))


def back_substitute(
    j: int, phi_j: float, psi_j: float, r1: float, r3: float, r5: float, m_jj: float, a_jj: float,
    params: ModelParams,
) -> Tuple[float, float, float]:  # fmt: skip
    """Recovers (W_j, Z_j, Q_j) from the nodal solution."""
    if m_jj <= 0.0 or a_jj <= 0.0:
        raise DegenerateDiagonal(f"node {j}: M_jj={m_jj}, A_jj={a_jj} must be positive")
    return _back_substitute(float(phi_j), float(psi_j), float(r1), float(r3), float(r5), m_jj, a_jj, params.tau)


# ------------- Sweeps and time steps -------------
def _check_dimensions(state: State, n: int) -> None:
    for name in ("phi", "psi", "w", "z", "q"):
        vec = getattr(state, name)
        if len(vec) != n:
            raise DimensionError(f"{name} has length {len(vec)}, expected {n}")


def gs_sweep(
    state: State, explicit: ExplicitTerms, matrices: SystemMatrices, params: ModelParams, relaxation: float = 1.0
) -> Tuple[State, float]:
    """Performs one Gauss-Seidel pass over all nodes, updating state in place.

    Returns the state and the sup-norm of the (Phi, Psi) updates.
    """
    _check_dimensions(state, matrices.n_nodes)
    coupling = matrices.coupling
    max_update, bad_node = _gs_sweep_kernel(
        coupling.indptr,
        coupling.indices,
        coupling.data,
        matrices.splitting.a_diag,
        matrices.mass,
        explicit.phi_n,
        explicit.psi_n,
        explicit.r_n,
        explicit.s_n,
        state.phi,
        state.psi,
        state.w,
        state.z,
        state.q,
        params.eps,
        params.lam,
        params.omega,
        params.sigma,
        params.c_f,
        params.tau,
        float(relaxation),
    )
    if bad_node >= 0:
        # Raises with the offending metric in the message
        node_coefficients(bad_node, matrices.mass[bad_node], matrices.splitting.a_diag[bad_node], params)
    return state, float(max_update)


def d1_residual(state: State, phi_n: np.ndarray, matrices: SystemMatrices, params: ModelParams) -> float:
    """Returns ||M (Phi - Phi^n) + tau A W||_inf."""
    lhs = matrices.mass * (state.phi - phi_n) + params.tau * (matrices.stiffness @ state.w)
    return float(np.max(np.abs(lhs)))


def mass_defect(state: State, phi_n: np.ndarray, matrices: SystemMatrices) -> float:
    """Returns |sum_j M_jj (Phi_j - Phi^n_j)|, the mass gained or lost by the current iterate."""
    return abs(float(matrices.mass @ (state.phi - phi_n)))


def d4_residual(state: State, matrices: SystemMatrices) -> float:
    """Returns ||A Psi - M Q||_inf."""
    return float(np.max(np.abs(matrices.stiffness @ state.psi - matrices.mass * state.q)))


def dissipation(state: State, matrices: SystemMatrices, params: ModelParams) -> float:
    """Returns tau ||grad W||^2 + tau ||Z||_h^2."""
    grad_w = float(state.w @ (matrices.stiffness @ state.w))
    z_norm = float(matrices.mass @ (state.z * state.z))
    return params.tau * (grad_w + z_norm)


def solve_timestep(
    state: State, matrices: SystemMatrices, params: ModelParams, settings: IterationSettings
) -> Tuple[State, StepStats]:
    """Advances one time level, warm-starting the iteration from the previous level.

    The iteration stops once the (Phi, Psi) updates are below tol_gs, the residuals of the
    W and Q equations are below tol_residual and the iterate has lost or gained less than
    tol_mass of sum M Phi. After a sweep, sum M (Phi - Phi^n) = -tau 1^T A_L^T dW with dW the
    sweep's update of W.
    """
    _check_dimensions(state, matrices.n_nodes)
    explicit = explicit_terms(state, matrices, params)
    energy_before = discrete_energy(state, matrices.mass, matrices.stiffness, params).e_total
    iterate = state.copy()
    max_update = math.inf
    residual = math.inf
    defect = math.inf
    sweeps = 0
    while True:
        sweeps += 1
        iterate, max_update = gs_sweep(iterate, explicit, matrices, params, settings.relaxation)
        residual = d4_residual(iterate, matrices)
        if max_update < settings.tol_gs and residual < settings.tol_residual:
            residual = max(residual, d1_residual(iterate, explicit.phi_n, matrices, params))
            defect = mass_defect(iterate, explicit.phi_n, matrices)
            if residual < settings.tol_residual and defect < settings.tol_mass:
                break
        if sweeps >= settings.max_sweeps:
            logger.error(
                f"step {state.step + 1}: sweep budget exhausted "
                f"(max_update={max_update:.3e}, mass_defect={defect:.3e})"
            )
            raise NoConvergence(sweeps, max_update, residual)
    iterate.time = state.time + params.tau
    iterate.step = state.step + 1
    energy_after = discrete_energy(iterate, matrices.mass, matrices.stiffness, params).e_total
    stats = StepStats(
        step=iterate.step,
        sweeps=sweeps,
        max_update=max_update,
        residual=residual,
        mass_defect=defect,
        energy_before=energy_before,
        energy_after=energy_after,
        dissipation=dissipation(iterate, matrices, params),
    )
    logger.debug(f"step {stats.step}: {sweeps} sweeps, E={energy_after:.12g}, residual={residual:.2e}")
    return iterate.freeze(), stats
