"""Structured P1 triangulation of the unit square and its lumped mass / stiffness operators.

The domain is (-1/2, 1/2)^2. Nodes are numbered row-major (x fastest), and every grid
square is cut along its bottom-left to top-right diagonal. Element matrices are
evaluated in closed form on integer grid offsets, so the assembled stiffness entries
are exact multiples of 1/2 and do not depend on h.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from errors import DegenerateDiagonal, InvalidMesh

logger = logging.getLogger(__name__)


# ------------- Mesh -------------
@dataclass(frozen=True)
class Mesh:
    """Uniform criss-cross triangulation with (n+1)^2 nodes and 2n^2 triangles."""

    n_cells_per_side: int
    h: float
    nodes: np.ndarray  # (n_nodes, 2) coordinates
    elements: np.ndarray  # (n_elements, 3) node indices, counter-clockwise
    grid_index: np.ndarray = field(repr=False)  # (n_nodes, 2) integer (ix, iy)

    @property
    def n_nodes(self) -> int:
        return (self.n_cells_per_side + 1) ** 2

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def grid_shape(self) -> tuple:
        """Shape (rows, cols) = (iy, ix) of the nodal grid."""
        side = self.n_cells_per_side + 1
        return side, side

    def element_areas(self) -> np.ndarray:
        """Returns the area of every triangle, evaluated on integer grid offsets and scaled by h^2."""
        p = self.grid_index[self.elements]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        cross = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]).astype(np.float64)
        return 0.5 * cross * (self.h * self.h)


def build_mesh(n: int) -> Mesh:
    """Builds the n x n criss-cross triangulation of (-1/2, 1/2)^2."""
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 2:
        raise InvalidMesh(f"mesh needs an integer n >= 2 cells per side, got {n!r}")
    n = int(n)
    side = n + 1
    iy, ix = np.divmod(np.arange(side * side), side)
    grid_index = np.column_stack([ix, iy]).astype(np.int64)
    nodes = grid_index / n - 0.5

    cy, cx = np.divmod(np.arange(n * n), n)
    bl = cy * side + cx
    br = bl + 1
    tl = bl + side
    tr = tl + 1
    lower = np.column_stack([bl, br, tr])
    upper = np.column_stack([bl, tr, tl])
    # Interleaved so both halves of a square are adjacent
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper
    logger.debug(f"built mesh n={n}: {side * side} nodes, {len(elements)} triangles")
    return Mesh(n_cells_per_side=n, h=1.0 / n, nodes=nodes, elements=elements, grid_index=grid_index)


# ------------- Element matrices -------------
def local_stiffness(offsets: np.ndarray) -> np.ndarray:
    """Returns the P1 stiffness matrix of a triangle given integer vertex offsets (3, 2).

    In 2D the P1 stiffness is invariant under uniform scaling, so grid units give the
    exact matrix for any h.
    """
    x = offsets[:, 0].astype(np.float64)
    y = offsets[:, 1].astype(np.float64)
    b = np.array([y[1] - y[2], y[2] - y[0], y[0] - y[1]])
    c = np.array([x[2] - x[1], x[0] - x[2], x[1] - x[0]])
    area = 0.5 * (b[0] * c[1] - b[1] * c[0])
    return (np.outer(b, b) + np.outer(c, c)) / (4.0 * area)


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """Assembles A_ij = (grad chi_i, grad chi_j) as a CSR matrix with sorted indices."""
    local = np.stack([local_stiffness(mesh.grid_index[tri]) for tri in mesh.elements[:2]])
    # Every even element is a lower half-square, every odd one an upper half-square
    per_element = np.tile(local, (mesh.n_elements // 2, 1, 1))
    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    n = mesh.n_nodes
    stiffness = sp.coo_matrix((per_element.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    stiffness.eliminate_zeros()
    stiffness.sort_indices()
    return stiffness


def assemble_lumped_mass(mesh: Mesh) -> np.ndarray:
    """Returns the diagonal of the lumped mass matrix, M_jj = sum of incident areas / 3."""
    weights = np.repeat(mesh.element_areas() / 3.0, 3)
    return np.bincount(mesh.elements.ravel(), weights=weights, minlength=mesh.n_nodes)


# ------------- Splitting -------------
@dataclass(frozen=True)
class MatrixSplitting:
    """A = A_D - A_L - A_L^T with A_L strictly lower triangular."""

    a_diag: np.ndarray
    a_lower: sp.csr_matrix

    def reconstruct(self) -> sp.csr_matrix:
        """Returns A_D - A_L - A_L^T."""
        return (sp.diags(self.a_diag) - self.a_lower - self.a_lower.T).tocsr()

    def coupling(self) -> sp.csr_matrix:
        """Returns A_L + A_L^T, the off-diagonal action used by the Gauss-Seidel residuals."""
        coupling = (self.a_lower + self.a_lower.T).tocsr()
        coupling.sort_indices()
        return coupling


def split_stiffness(stiffness: sp.spmatrix) -> MatrixSplitting:
    """Splits a symmetric matrix into its diagonal and negated strict lower triangle."""
    a_diag = np.asarray(stiffness.diagonal(), dtype=np.float64)
    bad = np.flatnonzero(a_diag <= 0.0)
    if bad.size:
        raise DegenerateDiagonal(f"nonpositive diagonal entry A[{bad[0]},{bad[0]}]={a_diag[bad[0]]}")
    a_lower = (-sp.tril(stiffness, k=-1)).tocsr()
    a_lower.sort_indices()
    return MatrixSplitting(a_diag=a_diag, a_lower=a_lower)


# ------------- Bundle -------------
@dataclass(frozen=True)
class SystemMatrices:
    """Static operators shared read-only by the solver and diagnostics."""

    mesh: Mesh
    mass: np.ndarray
    stiffness: sp.csr_matrix
    splitting: MatrixSplitting
    coupling: sp.csr_matrix

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes


def assemble_system(mesh: Mesh) -> SystemMatrices:
    """Assembles M, A, the splitting of A and the coupling A_L + A_L^T."""
    mass = assemble_lumped_mass(mesh)
    if np.any(mass <= 0.0):
        raise DegenerateDiagonal("lumped mass matrix has a nonpositive entry")
    stiffness = assemble_stiffness(mesh)
    splitting = split_stiffness(stiffness)
    for arr in (mass, splitting.a_diag):
        arr.flags.writeable = False
    logger.info(f"assembled operators: {mesh.n_nodes} nodes, nnz(A)={stiffness.nnz}")
    return SystemMatrices(
        mesh=mesh, mass=mass, stiffness=stiffness, splitting=splitting, coupling=splitting.coupling()
    )
