"""Exterior-value Dirichlet solver, DN map assembly and the conductivity-to-
Schroedinger reduction with its exact matrix-level verification.

The exterior datum is always represented by extension by zero into omega;
the DN pairing is independent of that choice and the tests assert it.
DN matrix entries carry the h^n node-pairing weight, i.e. entry (l, k) is
the bilinear form of the solution for the unit source at node k against the
unit observation field at node l.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import FracParams, Grid
from .operators import (
    Conductivity,
    NonlocalOperator,
    assemble_conductivity,
    assemble_laplacian,
    assemble_schrodinger,
)


class SolverError(RuntimeError):
    """Raised when the interior block cannot be factorized reliably."""

    def __init__(self, message: str, cond: float | None = None):
        if cond is not None:
            message = f"{message} (estimated condition number {cond:.3e})"
        super().__init__(message)
        self.cond = cond


def factor_interior(A_II: np.ndarray, context: str):
    """LU-factor an interior block, raising SolverError when it is
    numerically singular (pivot collapse beyond 1e-12 of the largest)."""
    lu, piv = scipy.linalg.lu_factor(A_II)
    d = np.abs(np.diag(lu))
    if d.min() <= 1e-12 * max(d.max(), 1.0):
        raise SolverError(f"{context}: interior block numerically singular",
                          cond=float(np.linalg.cond(A_II)))
    return lu, piv


@dataclass
class ExteriorDatum:
    """Values on the exterior node set, zero elsewhere by convention."""

    values: np.ndarray  # full length N, zero on interior nodes

    @classmethod
    def from_full(cls, grid: Grid, values: np.ndarray) -> "ExteriorDatum":
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.N,):
            raise ValueError("ExteriorDatum: wrong length")
        if np.any(values[grid.interior_idx] != 0.0):
            raise ValueError("ExteriorDatum: support must lie in exterior_idx")
        return cls(values)

    @classmethod
    def unit(cls, grid: Grid, node: int) -> "ExteriorDatum":
        if node not in grid.exterior_idx:
            raise ValueError(f"ExteriorDatum.unit: node {node} is not exterior")
        v = np.zeros(grid.N)
        v[node] = 1.0
        return cls(v)


@dataclass
class DnMatrix:
    """DN map sampled on exterior source set W1 and observation set W2."""

    source_idx: np.ndarray
    obs_idx: np.ndarray
    matrix: np.ndarray  # shape (|W2|, |W1|)

    def pair(self, f: np.ndarray, v: np.ndarray) -> float:
        """<Lambda f, v> for f given on W1 and v given on W2."""
        return float(v @ self.matrix @ f)


@dataclass
class Potential:
    """Nodal potential; interior_supported records whether exterior values
    vanish (the reduction generically produces nonzero exterior values)."""

    values: np.ndarray
    interior_supported: bool = True

    def interior(self, grid: Grid) -> np.ndarray:
        return self.values[grid.interior_idx]


def _check_exterior_support(grid: Grid, v: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (grid.N,):
        raise ValueError(f"{name}: expected full nodal vector of length {grid.N}")
    if np.any(v[grid.interior_idx] != 0.0):
        raise ValueError(f"{name}: support must lie in the exterior node set")
    return v


def solve_dirichlet(op: NonlocalOperator, g: np.ndarray,
                    F: np.ndarray | None = None) -> np.ndarray:
    """Solve (op u)_i = F_i on interior nodes with u = g on exterior nodes.

    g is the zero-extended exterior datum (full nodal vector); F defaults
    to zero and only its interior entries are read.  Direct dense solve of
    A_II u_I = F_I - A_IE g_E.
    """
    grid = op.grid
    g = _check_exterior_support(grid, g, "solve_dirichlet: g")
    I = grid.interior_idx
    E = grid.exterior_idx
    A = op.matrix
    rhs = np.zeros(I.size) if F is None else np.asarray(F, dtype=float)[I]
    rhs = rhs - A[np.ix_(I, E)] @ g[E]
    lu, piv = factor_interior(A[np.ix_(I, I)], "solve_dirichlet")
    u = np.zeros(grid.N)
    u[E] = g[E]
    u[I] = scipy.linalg.lu_solve((lu, piv), rhs)
    return u


def _operator_for(grid: Grid, fp: FracParams, gamma: Conductivity | None,
                  q: np.ndarray | None) -> NonlocalOperator:
    if gamma is not None and q is not None:
        raise ValueError("pass either a conductivity or a potential, not both")
    if q is not None:
        return assemble_schrodinger(grid, fp, q)
    if gamma is not None:
        return assemble_conductivity(grid, fp, gamma)
    return assemble_laplacian(grid, fp)


def dn_from_operator(op: NonlocalOperator, W1: np.ndarray, W2: np.ndarray) -> DnMatrix:
    """Assemble the DN matrix column by column from an operator.

    Column k: solve the Dirichlet problem with the unit exterior source at
    node k, then entry (l, k) = h^n * (A u_k)_l for l in W2, which equals
    the bilinear pairing of u_k against the unit observation field.
    """
    grid = op.grid
    W1 = np.asarray(W1, dtype=int)
    W2 = np.asarray(W2, dtype=int)
    ext = set(grid.exterior_idx.tolist())
    for W, nm in ((W1, "W1"), (W2, "W2")):
        if not set(W.tolist()) <= ext:
            raise ValueError(f"assemble_dn: {nm} must be a subset of exterior_idx")
    I = grid.interior_idx
    E = grid.exterior_idx
    A = op.matrix
    lu, piv = factor_interior(A[np.ix_(I, I)], "assemble_dn")
    # all W1 columns at once: U_I = -A_II^{-1} A_I,W1
    U_I = scipy.linalg.lu_solve((lu, piv), -A[np.ix_(I, W1)])
    # (A u_k)_l = A_l,W1[:, k] (exterior datum part) + A_l,I U_I[:, k]
    M = A[np.ix_(W2, W1)] + A[np.ix_(W2, I)] @ U_I
    return DnMatrix(W1, W2, grid.h**grid.n * M)


def assemble_dn(grid: Grid, fp: FracParams, gamma: Conductivity,
                W1: np.ndarray, W2: np.ndarray) -> DnMatrix:
    """DN matrix of the conductivity operator."""
    return dn_from_operator(_operator_for(grid, fp, gamma, None), W1, W2)


def assemble_dn_schrodinger(grid: Grid, fp: FracParams, q: np.ndarray,
                            W1: np.ndarray, W2: np.ndarray) -> DnMatrix:
    """DN matrix of (-Delta)^s + q (potential restricted to omega)."""
    return dn_from_operator(_operator_for(grid, fp, None, q), W1, W2)


def liouville_reduce(grid: Grid, fp: FracParams, gamma: Conductivity) -> Potential:
    """Potential of the reduced Schroedinger equation:

        q = -(-Delta)^s m / gamma^{1/2},   m = gamma^{1/2} - 1.

    Evaluated at every node; m being interior-supported does not make
    (-Delta)^s m interior-supported, so the result carries
    interior_supported = False whenever the exterior values are nonzero
    (they feed the DN gap identity).
    """
    lap = assemble_laplacian(grid, fp)
    q = -(lap.matrix @ gamma.m_values) / gamma.sqrt
    supported = bool(np.all(q[grid.exterior_idx] == 0.0))
    return Potential(q, interior_supported=supported)


def verify_reduction(grid: Grid, fp: FracParams, gamma: Conductivity) -> float:
    """Max-norm residual of the matrix identity

        C_gamma D_{gamma^{-1/2}}  =  D_{gamma^{1/2}} ( L + diag q )

    over interior rows, relative to the scale of C_gamma.  Exact (up to
    roundoff) for the punctured-sum discretization."""
    C = assemble_conductivity(grid, fp, gamma).matrix
    L = assemble_laplacian(grid, fp).matrix
    q = liouville_reduce(grid, fp, gamma).values
    g = gamma.sqrt
    lhs = C * (1.0 / g)[None, :]
    rhs = g[:, None] * (L + np.diag(q))
    I = grid.interior_idx
    scale = np.max(np.abs(C))
    return float(np.max(np.abs(lhs[I] - rhs[I])) / scale)


def dn_gap(grid: Grid, fp: FracParams, gamma: Conductivity,
           f: np.ndarray, v: np.ndarray) -> tuple[float, float]:
    """Both sides of the DN gap identity for exterior-supported f and v:

        left  = <Lambda_q f, v> - <Lambda_gamma f, v>
        right = h^n sum_{exterior} f_i v_i ((-Delta)^s m)_i

    computed independently (two DN assemblies vs the direct exterior sum).
    """
    f = _check_exterior_support(grid, f, "dn_gap: f")
    v = _check_exterior_support(grid, v, "dn_gap: v")
    E = grid.exterior_idx
    q = liouville_reduce(grid, fp, gamma).values
    M_gam = assemble_dn(grid, fp, gamma, E, E)
    M_q = assemble_dn_schrodinger(grid, fp, q, E, E)
    left = M_q.pair(f[E], v[E]) - M_gam.pair(f[E], v[E])
    lap_m = assemble_laplacian(grid, fp).matrix @ gamma.m_values
    right = grid.h**grid.n * float(np.sum(f[E] * v[E] * lap_m[E]))
    return left, right


def dn_pointwise(grid: Grid, fp: FracParams, gamma: Conductivity,
                 g: np.ndarray) -> np.ndarray:
    """Pointwise DN route: the conductivity operator applied to the solution,
    restricted to exterior nodes (flux density; multiply by h^n to match
    DnMatrix entries)."""
    g = _check_exterior_support(grid, g, "dn_pointwise: g")
    op = assemble_conductivity(grid, fp, gamma)
    u = solve_dirichlet(op, g)
    return (op.matrix @ u)[grid.exterior_idx]
