"""Admissible triangle K and the metric projection onto it.

K is the closed triangle with vertices (-1, 0), (1, 0), (0, 1). The metric is
A = [[a11, -a12], [-a12, a22]] and the projection minimizes (y - x)^T A (y - x) over y in K.

Two algorithms are provided:
- project_k enumerates the three edges (exact for any SPD metric);
- project_k_fast follows the region branching (exact when a12 == 0).
The solver uses the branching only for diagonal metrics.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple

from numba import njit

from errors import NonSPDMetric

# Edges of K as (start point, direction): bottom, right slant, left slant
_EDGES = (
    (-1.0, 0.0, 2.0, 0.0),
    (0.0, 1.0, 1.0, -1.0),
    (0.0, 1.0, -1.0, -1.0),
)


class KPoint(NamedTuple):
    """A point (phi, psi) of the admissible triangle."""

    phi: float
    psi: float


@dataclass(frozen=True)
class ProjMatrix:
    """Nodal 2x2 metric [[a11, -a12], [-a12, a22]]."""

    a11: float
    a12: float
    a22: float

    @property
    def is_spd(self) -> bool:
        return self.a11 > 0.0 and self.a22 > 0.0 and self.a12 * self.a12 < self.a11 * self.a22

    def validate(self) -> "ProjMatrix":
        if not self.is_spd:
            raise NonSPDMetric(f"metric is not SPD: a11={self.a11}, a12={self.a12}, a22={self.a22}")
        return self

    def inner(self, p: Tuple[float, float], q: Tuple[float, float]) -> float:
        """Returns p^T A q."""
        return (
            self.a11 * p[0] * q[0]
            - self.a12 * (p[0] * q[1] + p[1] * q[0])
            + self.a22 * p[1] * q[1]
        )

    def solve(self, beta: Tuple[float, float]) -> Tuple[float, float]:
        """Returns A^{-1} beta."""
        return _solve2(self.a11, self.a12, self.a22, beta[0], beta[1])

    def scaled(self, c: float) -> "ProjMatrix":
        return ProjMatrix(c * self.a11, c * self.a12, c * self.a22)


# ------------- Kernels -------------
@njit(cache=True)
def _in_k(phi, psi, tol):
    return (
        phi >= -1.0 - tol
        and phi <= 1.0 + tol
        and phi + psi <= 1.0 + tol
        and psi - phi <= 1.0 + tol
        and psi >= -tol
    )


@njit(cache=True)
def _solve2(a11, a12, a22, b1, b2):
    det = a11 * a22 - a12 * a12
    return (a22 * b1 + a12 * b2) / det, (a12 * b1 + a11 * b2) / det


@njit(cache=True)
def _dist2(a11, a12, a22, d1, d2):
    return a11 * d1 * d1 - 2.0 * a12 * d1 * d2 + a22 * d2 * d2


@njit(cache=True)
def _segment_projection(a11, a12, a22, x1, x2, p1, p2, v1, v2):
    # <x - p, v>_A / ||v||_A^2 clamped to the segment
    d1 = x1 - p1
    d2 = x2 - p2
    num = a11 * d1 * v1 - a12 * (d1 * v2 + d2 * v1) + a22 * d2 * v2
    den = a11 * v1 * v1 - 2.0 * a12 * v1 * v2 + a22 * v2 * v2
    t = min(max(num / den, 0.0), 1.0)
    return p1 + t * v1, p2 + t * v2


@njit(cache=True)
def _project_exact(a11, a12, a22, x1, x2):
    if _in_k(x1, x2, 0.0):
        return x1, x2
    best1 = 0.0
    best2 = 0.0
    best = math.inf
    for k in range(3):
        p1, p2, v1, v2 = _EDGES[k]
        y1, y2 = _segment_projection(a11, a12, a22, x1, x2, p1, p2, v1, v2)
        d = _dist2(a11, a12, a22, y1 - x1, y2 - x2)
        if d < best:
            best = d
            best1 = y1
            best2 = y2
    return best1, best2


@njit(cache=True)
def _project_branch(a11, a12, a22, x1, x2):
    if _in_k(x1, x2, 0.0):
        return x1, x2
    if x2 <= 0.0:
        return max(-1.0, min(x1 - a12 / a11 * x2, 1.0)), 0.0
    if x1 >= 0.0:
        v1, v2 = 1.0, -1.0
    else:
        v1, v2 = -1.0, -1.0
    return _segment_projection(a11, a12, a22, x1, x2, 0.0, 1.0, v1, v2)


@njit(cache=True)
def _project(a11, a12, a22, x1, x2):
    if a12 == 0.0:
        return _project_branch(a11, a12, a22, x1, x2)
    return _project_exact(a11, a12, a22, x1, x2)


# ------------- Public API -------------
def in_k(phi: float, psi: float, tol: float = 0.0) -> bool:
    """Returns whether (phi, psi) lies in K, with every inequality relaxed by tol."""
    if tol < 0.0:
        raise ValueError(f"tol must be >= 0, got {tol}")
    return bool(_in_k(float(phi), float(psi), float(tol)))


def project_k(metric: ProjMatrix, x: Tuple[float, float]) -> KPoint:
    """Exact metric projection of x onto K by edge enumeration."""
    metric.validate()
    y1, y2 = _project_exact(metric.a11, metric.a12, metric.a22, float(x[0]), float(x[1]))
    return KPoint(y1, y2)


def project_k_fast(metric: ProjMatrix, x: Tuple[float, float]) -> KPoint:
    """Region-branching projection; exact for diagonal metrics."""
    metric.validate()
    y1, y2 = _project_branch(metric.a11, metric.a12, metric.a22, float(x[0]), float(x[1]))
    return KPoint(y1, y2)
