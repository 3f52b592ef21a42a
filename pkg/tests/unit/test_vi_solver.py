"""Unit tests for the projected Gauss-Seidel solver."""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Make simulator modules importable
sys.path.append(str(Path(__file__).parents[2] / "simulator"))
from errors import (  # noqa: E402
    DegenerateDiagonal,
    DimensionError,
    InvalidParams,
    NoConvergence,
    TimeStepTooLarge,
)
from fem_mesh import assemble_system, build_mesh  # noqa: E402
from model import ModelParams, discrete_energy  # noqa: E402
from projection import ProjMatrix  # noqa: E402
from vi_solver import (  # noqa: E402
    IterationSettings,
    State,
    back_substitute,
    d1_residual,
    d4_residual,
    dissipation,
    explicit_terms,
    gs_sweep,
    init_q0,
    mass_defect,
    node_coefficients,
    node_residuals,
    node_rhs,
    node_solve,
    solve_timestep,
    spd_margin,
)

EPS = 1.0 / (16.0 * math.pi)
TIGHT = IterationSettings(tol_gs=1e-11, tol_residual=1e-10, max_sweeps=5000)


def random_admissible(rng: np.random.Generator, n: int):
    """Returns CHSH-style initial data: small zero-mean noise in phi, psi = (1 - |phi|) / 2."""
    phi = rng.uniform(-0.01, 0.01, n)
    phi -= phi.mean()
    return phi, 0.5 * (1.0 - np.abs(phi))


# ------------- Dense reference implementation -------------
def dense_projection(mat: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Projects x onto K in the metric mat by comparing the clamped edge minimizers."""
    phi, psi = x
    if -1.0 <= phi <= 1.0 and psi >= 0.0 and phi + psi <= 1.0 and psi - phi <= 1.0:
        return x.copy()
    edges = [
        (np.array([-1.0, 0.0]), np.array([1.0, 0.0])),
        (np.array([1.0, 0.0]), np.array([0.0, 1.0])),
        (np.array([0.0, 1.0]), np.array([-1.0, 0.0])),
    ]
    best, best_cost = None, np.inf
    for start, end in edges:
        v = end - start
        t = float(np.clip((x - start) @ mat @ v / (v @ mat @ v), 0.0, 1.0))
        y = start + t * v
        cost = (y - x) @ mat @ (y - x)
        if cost < best_cost:
            best, best_cost = y, cost
    return best


def dense_sweeps(system, params: ModelParams, state: State, n_sweeps: int):
    """Runs Gauss-Seidel sweeps from dense matrices and a direct 2x2 solve at every node."""
    a = system.stiffness.toarray()
    m = np.array(system.mass)
    a_d = np.diag(a).copy()
    a_l = -np.tril(a, -1)
    p = params
    phi_n, psi_n = state.phi.copy(), state.psi.copy()
    s = psi_n - 0.5
    dphi_minus = -p.alpha * phi_n + p.delta * phi_n * s - p.c_f * phi_n
    dpsi_minus = -p.g * s**2 - p.gamma * s + 0.5 * p.delta * phi_n**2 - p.c_f * psi_n
    r_n = 0.5 * p.sigma * a @ psi_n - m * dphi_minus
    s_n = 0.5 * p.lam * p.omega**4 * m - m * dpsi_minus + 0.5 * p.sigma * a @ phi_n
    phi, psi = state.phi.copy(), state.psi.copy()
    w, z, q = state.w.copy(), state.z.copy(), state.q.copy()
    for _ in range(n_sweeps):
        for j in range(len(m)):

            def lower_plus_upper(x):
                # (A_L x)_j uses entries i < j, (A_L^T x)_j entries i > j
                return a_l[j, :j] @ x[:j] + a_l[j + 1 :, j] @ x[j + 1 :]

            lw, lphi, lpsi, lq = (lower_plus_upper(x) for x in (w, phi, psi, q))
            r1 = m[j] * phi_n[j] + p.tau * lw
            r2 = r_n[j] + p.eps * lphi - 0.5 * p.sigma * lpsi
            r3 = m[j] * psi_n[j]
            r4 = s_n[j] - 0.5 * p.sigma * lphi + p.lam * lq - 2.0 * p.lam * p.omega**2 * lpsi
            r5 = lpsi
            a11 = p.eps * a_d[j] + p.c_f * m[j] + m[j] ** 2 / (p.tau * a_d[j])
            a22 = p.lam * (p.omega**2 * m[j] - a_d[j]) ** 2 / m[j] + p.c_f * m[j] + m[j] / p.tau
            a12 = 0.5 * p.sigma * a_d[j]
            mat = np.array([[a11, -a12], [-a12, a22]])
            beta = np.array([r2 + m[j] * r1 / (p.tau * a_d[j]), r4 + r3 / p.tau + p.lam * a_d[j] * r5 / m[j]])
            y = dense_projection(mat, np.linalg.solve(mat, beta))
            phi[j], psi[j] = y
            w[j] = (r1 - m[j] * y[0]) / (p.tau * a_d[j])
            z[j] = (r3 - m[j] * y[1]) / (p.tau * m[j])
            q[j] = -(r5 - a_d[j] * y[1]) / m[j]
    return phi, psi, w, z, q


# ------------- Tests -------------
class TestIterationSettings:
    """Tests for IterationSettings."""

    def test_default_values(self):
        """Verifies default stopping rule."""
        settings = IterationSettings()
        assert settings.tol_gs == 1e-8
        assert settings.max_sweeps == 20000
        assert settings.tol_residual == 1e-8
        assert settings.relaxation == 1.0

    def test_from_env(self, monkeypatch):
        """Verifies configuration from environment variables."""
        monkeypatch.setenv("CHSH_TOL_GS", "1e-10")
        monkeypatch.setenv("CHSH_MAX_SWEEPS", "500")
        monkeypatch.setenv("CHSH_TOL_RESIDUAL", "1e-9")
        monkeypatch.setenv("CHSH_TOL_MASS", "1e-13")
        monkeypatch.setenv("CHSH_RELAXATION", "1.3")
        settings = IterationSettings.from_env()
        assert settings.tol_gs == 1e-10
        assert settings.max_sweeps == 500
        assert settings.tol_residual == 1e-9
        assert settings.tol_mass == 1e-13
        assert settings.relaxation == 1.3

    @pytest.mark.parametrize(
        "kwargs", [{"tol_gs": 0.0}, {"max_sweeps": 0}, {"tol_residual": -1.0}, {"tol_mass": 0.0}, {"relaxation": 2.0}]
    )
    def test_invalid(self, kwargs):
        """Verifies invalid settings raise InvalidParams."""
        with pytest.raises(InvalidParams):
            IterationSettings(**kwargs)


class TestState:
    """Tests for the State container."""

    def test_initial(self, system4):
        """Verifies level-0 state has Q from A Psi = M Q and zero W, Z."""
        rng = np.random.default_rng(0)
        phi, psi = random_admissible(rng, system4.n_nodes)
        state = State.initial(phi, psi, system4)
        assert state.step == 0 and state.time == 0.0
        np.testing.assert_array_equal(state.w, 0.0)
        np.testing.assert_array_equal(state.z, 0.0)
        assert d4_residual(state, system4) < 1e-14

    def test_initial_dimension_mismatch(self, system4):
        """Verifies wrong-length initial data raises DimensionError."""
        with pytest.raises(DimensionError):
            State.initial(np.zeros(3), np.zeros(system4.n_nodes), system4)

    def test_freeze_and_copy(self, system3):
        """Verifies frozen vectors are read-only and copies are writeable."""
        n = system3.n_nodes
        state = State.initial(np.zeros(n), np.full(n, 0.5), system3).freeze()
        with pytest.raises(ValueError):
            state.phi[0] = 1.0
        clone = state.copy()
        clone.phi[0] = 0.25
        assert state.phi[0] == 0.0


class TestInitQ0:
    """Tests for the initial auxiliary variable."""

    def test_constant_psi(self, system4):
        """Verifies constant Psi gives Q = 0."""
        q0 = init_q0(system4.mass, system4.stiffness, np.full(system4.n_nodes, 0.5))
        np.testing.assert_array_equal(q0, 0.0)

    def test_identity(self, system8):
        """Verifies ||A Psi0 - M Q0||_inf < 1e-14 for SH-style data."""
        psi0 = np.random.default_rng(1).uniform(0.49, 0.51, system8.n_nodes)
        q0 = init_q0(system8.mass, system8.stiffness, psi0)
        assert np.max(np.abs(system8.stiffness @ psi0 - system8.mass * q0)) < 1e-14

    def test_zero_mass(self, system3):
        """Verifies a zero mass entry raises DegenerateDiagonal."""
        mass = np.array(system3.mass)
        mass[2] = 0.0
        with pytest.raises(DegenerateDiagonal):
            init_q0(mass, system3.stiffness, np.zeros(system3.n_nodes))


class TestNodeCoefficients:
    """Tests for the nodal metric."""

    def test_sigma_zero_diagonal(self, ch_params):
        """Verifies sigma = 0 gives a diagonal SPD metric."""
        metric = node_coefficients(0, 1.0 / 64, 4.0, ch_params)
        assert metric.a12 == 0.0
        assert metric.is_spd

    def test_a22_without_swift_hohenberg(self):
        """Verifies lambda = 0 and C_F = 0 give a22 = M/tau."""
        params = ModelParams(eps=EPS, tau=1e-5)
        metric = node_coefficients(3, 0.01, 4.0, params)
        assert metric.a22 == pytest.approx(0.01 / 1e-5, rel=1e-15)
        assert metric.a11 == pytest.approx(EPS * 4.0 + 0.01**2 / (1e-5 * 4.0), rel=1e-15)

    def test_a22_identity(self, chsh_params):
        """Verifies (sqrt(l) w^2 sqrt(M) - sqrt(l) A / sqrt(M))^2 == l (w^2 M - A)^2 / M."""
        p = chsh_params
        for m_jj, a_jj in [(1.0 / 64, 4.0), (1.0 / 65536, 4.0), (1.0 / 3, 1.0)]:
            metric = node_coefficients(0, m_jj, a_jj, p)
            expected = p.lam * (p.omega**2 * m_jj - a_jj) ** 2 / m_jj + p.c_f * m_jj + m_jj / p.tau
            assert metric.a22 == pytest.approx(expected, rel=1e-12)
            assert metric.a12 == 0.5 * p.sigma * a_jj

    def test_time_step_too_large(self):
        """Verifies a non-SPD metric raises TimeStepTooLarge naming the node."""
        params = ModelParams(eps=EPS, lam=1e-5, sigma=1e6)
        with pytest.raises(TimeStepTooLarge) as exc_info:
            node_coefficients(7, 1.0 / 64, 4.0, params)
        assert exc_info.value.node == 7

    def test_degenerate(self, ch_params):
        """Verifies nonpositive diagonals are rejected."""
        with pytest.raises(DegenerateDiagonal):
            node_coefficients(0, 0.0, 4.0, ch_params)

    def test_spd_margin(self, system8, ch_params, chsh_params):
        """Verifies the margin is 0 without coupling and below 1 for the curvature-coupled preset."""
        assert spd_margin(system8, ch_params)[0] == 0.0
        margin, node = spd_margin(system8, chsh_params)
        assert 0.0 < margin < 1.0
        assert 0 <= node < system8.n_nodes


class TestNodeSolve:
    """Tests for the nodal obstacle problem."""

    def test_zero_rhs(self):
        """Verifies beta = 0 gives the origin."""
        assert tuple(node_solve(ProjMatrix(3.0, 1.0, 2.0), (0.0, 0.0))) == (0.0, 0.0)

    def test_projected_to_vertex(self):
        """Verifies beta = (2 a11, 0) with a diagonal metric lands on (1, 0)."""
        metric = ProjMatrix(5.0, 0.0, 7.0)
        assert tuple(node_solve(metric, (10.0, 0.0))) == (1.0, 0.0)

    def test_variational_inequality(self):
        """Verifies the nodal VI against random admissible test points."""
        rng = np.random.default_rng(4)
        metric = ProjMatrix(4.0, 1.5, 2.0)
        beta = (9.0, -3.0)
        y = node_solve(metric, beta)
        x = metric.solve(beta)
        d = (y[0] - x[0], y[1] - x[1])
        for _ in range(100):
            u, v = rng.random(2)
            if u + v > 1.0:
                u, v = 1.0 - u, 1.0 - v
            eta, zeta = -1.0 + 2.0 * u + v, v
            assert metric.inner((eta - y[0], zeta - y[1]), d) >= -1e-9


class TestBackSubstitute:
    """Tests for the recovery of W, Z, Q."""

    def test_zero_numerators(self, ch_params):
        """Verifies W = 0 when Phi = r1/M and Z = 0 when Psi = r3/M."""
        m_jj, a_jj = 0.25, 4.0
        w, z, q = back_substitute(0, 0.3, 0.6, 0.3 * m_jj, 0.6 * m_jj, 0.6 * a_jj, m_jj, a_jj, ch_params)
        assert w == 0.0
        assert z == 0.0
        assert q == 0.0

    def test_values(self, ch_params):
        """Verifies the three formulas."""
        tau = ch_params.tau
        w, z, q = back_substitute(0, 0.1, 0.2, 1.0, 2.0, 3.0, 0.5, 4.0, ch_params)
        assert w == pytest.approx((1.0 - 0.05) / (tau * 4.0))
        assert z == pytest.approx((2.0 - 0.1) / (tau * 0.5))
        assert q == pytest.approx(-(3.0 - 0.8) / 0.5)


class TestNodeRhs:
    """Tests for the nodal right-hand side."""

    def test_stationary_data(self, system4):
        """Verifies beta1 = 0 and beta2 = M/(2 tau) for Phi = 0, Psi = 1/2 without couplings."""
        params = ModelParams(eps=EPS)
        n = system4.n_nodes
        state = State.initial(np.zeros(n), np.full(n, 0.5), system4)
        explicit = explicit_terms(state, system4, params)
        for j in (0, 7, 12):
            beta1, beta2 = node_rhs(j, state, explicit, system4, params)
            assert beta1 == 0.0
            assert beta2 == system4.mass[j] / (2.0 * params.tau)

    def test_with_swift_hohenberg(self, system4):
        """Verifies beta2 = S_j - 2 lambda omega^2 r5 + M Psi^n / tau + lambda A_jj r5 / M_jj."""
        params = ModelParams(eps=EPS, lam=1e-5, omega=100.0)
        n = system4.n_nodes
        state = State.initial(np.zeros(n), np.full(n, 0.5), system4)
        explicit = explicit_terms(state, system4, params)
        j = 12
        m_jj, a_jj = system4.mass[j], system4.splitting.a_diag[j]
        r = node_residuals(j, state, explicit, system4, params)
        assert r.r5 == pytest.approx(0.5 * a_jj, rel=1e-15)
        s_j = 0.5 * params.lam * params.omega**4 * m_jj
        expected = s_j - 2.0 * params.lam * params.omega**2 * r.r5 + 0.5 * m_jj / params.tau
        expected += params.lam * a_jj * r.r5 / m_jj
        assert node_rhs(j, state, explicit, system4, params)[1] == pytest.approx(expected, rel=1e-13)


class TestGaussSeidel:
    """Tests for sweeps against the dense reference."""

    @pytest.mark.parametrize("fixture_name", ["system3", "system4"])
    def test_matches_dense_reference(self, request, fixture_name, chsh_params):
        """Verifies five production sweeps reproduce the dense implementation."""
        system = request.getfixturevalue(fixture_name)
        rng = np.random.default_rng(21)
        phi0, psi0 = random_admissible(rng, system.n_nodes)
        start = State.initial(phi0, psi0, system)
        expected = dense_sweeps(system, chsh_params, start, 5)

        state = start.copy()
        explicit = explicit_terms(start, system, chsh_params)
        for _ in range(5):
            state, _ = gs_sweep(state, explicit, system, chsh_params)
        np.testing.assert_allclose(state.phi, expected[0], rtol=0, atol=1e-12)
        np.testing.assert_allclose(state.psi, expected[1], rtol=0, atol=1e-12)
        np.testing.assert_allclose(state.q, expected[4], rtol=1e-10, atol=1e-10)
        # W and Z divide by tau, so their rounding scales with 1/tau
        np.testing.assert_allclose(state.w, expected[2], rtol=1e-8, atol=1e-6)
        np.testing.assert_allclose(state.z, expected[3], rtol=1e-8, atol=1e-6)

    def test_stationary_fixed_point(self, system4):
        """Verifies the uncoupled stationary state is reproduced exactly in one sweep."""
        params = ModelParams(eps=EPS)
        n = system4.n_nodes
        state = State.initial(np.zeros(n), np.full(n, 0.5), system4).freeze()
        new_state, stats = solve_timestep(state, system4, params, IterationSettings())
        assert stats.sweeps == 1
        assert stats.max_update == 0.0
        for name in ("phi", "psi", "w", "z", "q"):
            np.testing.assert_array_equal(getattr(new_state, name), getattr(state, name))
        assert new_state.step == 1
        assert new_state.time == params.tau

    def test_sweep_dimension_check(self, system4, ch_params):
        """Verifies mismatched state vectors raise DimensionError."""
        n = system4.n_nodes
        state = State.initial(np.zeros(n), np.zeros(n), system4)
        explicit = explicit_terms(state, system4, ch_params)
        state.z = np.zeros(n + 1)
        with pytest.raises(DimensionError):
            gs_sweep(state, explicit, system4, ch_params)

    def test_time_step_too_large_propagates(self, system4):
        """Verifies the sweep reports the first node whose metric is not SPD."""
        params = ModelParams(eps=EPS, lam=1e-5, sigma=1e6)
        n = system4.n_nodes
        state = State.initial(np.zeros(n), np.full(n, 0.5), system4)
        with pytest.raises(TimeStepTooLarge) as exc_info:
            solve_timestep(state, system4, params, IterationSettings())
        assert exc_info.value.node == 0


class TestSolveTimestep:
    """Tests for a full time step."""

    @pytest.fixture
    def ch_start(self, system8):
        rng = np.random.default_rng(42)
        n = system8.n_nodes
        phi = rng.uniform(-0.01, 0.01, n)
        phi -= (system8.mass @ phi) / system8.mass.sum()
        return State.initial(phi, np.zeros(n), system8).freeze()

    @pytest.fixture
    def chsh_start(self, system8):
        rng = np.random.default_rng(43)
        n = system8.n_nodes
        phi = rng.uniform(-0.01, 0.01, n)
        phi -= (system8.mass @ phi) / system8.mass.sum()
        return State.initial(phi, 0.5 * (1.0 - np.abs(phi)), system8).freeze()

    def test_discrete_equations(self, system8, chsh_params, chsh_start):
        """Verifies the converged step satisfies the mass, psi and Q equations."""
        new, _ = solve_timestep(chsh_start, system8, chsh_params, TIGHT)
        m, a, tau = system8.mass, system8.stiffness, chsh_params.tau
        assert np.max(np.abs(m * (new.phi - chsh_start.phi) + tau * (a @ new.w))) < 1e-7
        assert np.max(np.abs(m * (new.psi - chsh_start.psi) + tau * m * new.z)) < 1e-12
        assert d4_residual(new, system8) < 1e-10

    def test_mass_and_admissibility(self, system8, ch_params, ch_start):
        """Verifies conservation of sum M Phi and (Phi, Psi) in K over several steps."""
        mass0 = float(system8.mass @ ch_start.phi)
        state = ch_start
        for _ in range(5):
            state, _ = solve_timestep(state, system8, ch_params, TIGHT)
            assert abs(float(system8.mass @ state.phi) - mass0) < 1e-11
            slack = np.minimum.reduce(
                [1 - state.phi, 1 + state.phi, 1 - state.phi - state.psi, 1 + state.phi - state.psi, state.psi]
            )
            assert slack.min() >= -1e-12

    def test_energy_inequality(self, system8, chsh_params, chsh_start):
        """Verifies E^{n+1} + tau||grad W||^2 + tau||Z||^2 <= E^n over several steps."""
        state = chsh_start
        for _ in range(5):
            state, stats = solve_timestep(state, system8, chsh_params, TIGHT)
            assert stats.dissipation >= 0.0
            assert stats.energy_after + stats.dissipation <= stats.energy_before + 1e-8 * (
                1.0 + abs(stats.energy_before)
            )

    def test_stats(self, system8, ch_params, ch_start):
        """Verifies StepStats against independent evaluations."""
        new, stats = solve_timestep(ch_start, system8, ch_params, TIGHT)
        assert stats.step == 1
        assert 1 <= stats.sweeps <= TIGHT.max_sweeps
        assert stats.max_update < TIGHT.tol_gs
        assert stats.residual < TIGHT.tol_residual
        before = discrete_energy(ch_start, system8.mass, system8.stiffness, ch_params).e_total
        assert stats.energy_before == before
        assert stats.dissipation == dissipation(new, system8, ch_params)

    def test_result_is_frozen(self, system8, ch_params, ch_start):
        """Verifies the returned state is immutable and the input untouched."""
        original = ch_start.phi.copy()
        new, _ = solve_timestep(ch_start, system8, ch_params, TIGHT)
        assert not new.phi.flags.writeable
        np.testing.assert_array_equal(ch_start.phi, original)

    def test_no_convergence(self, system8, ch_params, ch_start):
        """Verifies an exhausted sweep budget raises NoConvergence."""
        settings = IterationSettings(tol_gs=1e-15, tol_residual=1e-15, max_sweeps=2)
        with pytest.raises(NoConvergence) as exc_info:
            solve_timestep(ch_start, system8, ch_params, settings)
        assert exc_info.value.sweeps == 2

    def test_relaxation_same_solution(self, system8, ch_params, ch_start):
        """Verifies over-relaxed sweeps converge to the same time level."""
        plain, _ = solve_timestep(ch_start, system8, ch_params, TIGHT)
        relaxed_settings = IterationSettings(tol_gs=1e-11, tol_residual=1e-10, max_sweeps=5000, relaxation=1.2)
        relaxed, _ = solve_timestep(ch_start, system8, ch_params, relaxed_settings)
        np.testing.assert_allclose(relaxed.phi, plain.phi, atol=1e-8)
        np.testing.assert_allclose(relaxed.psi, plain.psi, atol=1e-8)

    def test_contraction_logged(self, system8, ch_params, ch_start):
        """Records whether max_update shrinks monotonically over successive sweeps."""
        state = ch_start.copy()
        explicit = explicit_terms(ch_start, system8, ch_params)
        updates = []
        for _ in range(20):
            state, update = gs_sweep(state, explicit, system8, ch_params)
            updates.append(update)
        increases = sum(1 for a, b in zip(updates, updates[1:]) if b > a)
        print(f"max_update increased in {increases} of {len(updates) - 1} sweeps")
        assert updates[-1] < updates[0]

    def test_mass_drift_bounded_over_many_steps(self):
        """Verifies sum M Phi stays within 1e-11 over 60 steps of a stiff double-well run."""
        system = assemble_system(build_mesh(16))
        params = ModelParams.with_default_cf(
            eps=EPS, lam=1.0e-5, omega=100.0, alpha=100.0, g=-2000.0, gamma=1000.0, tau=1.0e-6
        )
        settings = IterationSettings()
        rng = np.random.default_rng(42)
        phi, _ = random_admissible(rng, system.n_nodes)
        phi -= (system.mass @ phi) / system.mass.sum()
        state = State.initial(phi, 0.5 * (1.0 - np.abs(phi)), system).freeze()
        mass0 = float(system.mass @ state.phi)
        for _ in range(60):
            previous = state
            state, stats = solve_timestep(state, system, params, settings)
            assert stats.mass_defect < settings.tol_mass
            assert mass_defect(state, previous.phi, system) == stats.mass_defect
            assert d1_residual(state, previous.phi, system, params) < settings.tol_residual
            assert abs(float(system.mass @ state.phi) - mass0) <= 1e-11

